"""Configuration-driven experiment runner: CRB sweeps and Monte Carlo MSE runs.

Configs are INI files with [geometry], [channel], [training], [sweep], [mc]
and [output] sections. Every run is deterministic given the seed: per-trial
RNG streams are derived from (seed, sweep index, trial index), so serial and
threaded executions produce byte-identical CSV output.

CSV schema (version 1, fixed):
    sweep_var,value,model,mean_diag_db,mse_db,realizations,skipped
"""

from __future__ import annotations

import configparser
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .channels import (CorrelationModel, composite_covariance, composite_vector,
                       draw_geometric_params, synth_geometric, synth_unstructured)
from .crb import crb_structured, crb_unstructured
from .errors import IdentifiabilityError
from .estimators import lmmse_estimate, ls_estimate
from .geometry import SystemGeometry
from .training import (TrainingPlan, assemble_measurement, dft_ris_sequence,
                       hadamard_ris_sequence, one_hot_ris_sequence,
                       orthogonal_pilots, random_ris_sequence, simulate_uplink)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultRow",
    "load_config",
    "run_crb_sweep",
    "run_mc_mse",
    "run_synth",
    "CSV_HEADER",
]

CSV_HEADER = "sweep_var,value,model,mean_diag_db,mse_db,realizations,skipped"
CSV_SCHEMA_VERSION = 1

SWEEP_VARS = ("snr", "t", "d_h", "d_g", "d_f", "n")
PLAN_KINDS = ("dft", "hadamard", "onehot", "random")
MODELS = ("unstructured", "geometric", "both")
ESTIMATORS = ("ls", "lmmse")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message lists every violation."""


@dataclass
class ExperimentConfig:
    # geometry
    m: int = 4
    n_x: int = 2
    n_y: int = 2
    ue_antennas: tuple = (1,)
    bs_spacing: float = 0.5
    ris_spacing_x: float = 0.5
    ris_spacing_y: float = 0.5
    ue_spacing: float = 0.5
    # channel
    model: str = "both"
    d_h: int = 1
    d_g: int = 1
    d_f: int = 0
    gain_variance: str = "unit"
    grid_1d: int = 256
    grid_2d: int = 64
    correlation: str = ""
    # training
    plan: str = "dft"
    t: Optional[int] = None          # None = auto (K*(N+1) or K*N)
    include_direct: bool = False
    p: float = 1.0
    snr_db: float = 5.0
    # sweep
    sweep_variable: str = "snr"
    sweep_values: tuple = (0.0,)
    # mc
    trials: int = 100
    seed: int = 0
    estimator: str = "ls"
    # output
    output: str = "results.csv"

    def geometry(self, n_override: Optional[int] = None) -> SystemGeometry:
        n_x, n_y = self.n_x, self.n_y
        if n_override is not None:
            n_x = n_y = int(n_override)
        return SystemGeometry.create(self.m, n_x, n_y, self.ue_antennas,
                                     self.bs_spacing, self.ris_spacing_x,
                                     self.ris_spacing_y, self.ue_spacing)


_DEFAULTS = ExperimentConfig()


def _parse_section(cp, name):
    return cp[name] if cp.has_section(name) else {}


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate an experiment config; all violations are reported."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")

    errors = []
    cfg = ExperimentConfig()

    def grab(section, key, conv, default, required=False):
        sec = _parse_section(cp, section)
        if key not in sec:
            if required:
                errors.append(f"[{section}] {key} is required")
            return default
        raw = sec[key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            errors.append(f"[{section}] {key} = {raw!r}: {exc}")
            return default

    def ints(raw):
        return tuple(int(tok) for tok in raw.split())

    def floats(raw):
        return tuple(float(tok) for tok in raw.split())

    def boolean(raw):
        low = raw.strip().lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")

    def t_value(raw):
        return None if raw.strip().lower() == "auto" else int(raw)

    cfg.m = grab("geometry", "m", int, cfg.m)
    cfg.n_x = grab("geometry", "n_x", int, cfg.n_x)
    cfg.n_y = grab("geometry", "n_y", int, cfg.n_y)
    cfg.ue_antennas = grab("geometry", "ue_antennas", ints, cfg.ue_antennas)
    cfg.bs_spacing = grab("geometry", "bs_spacing", float, cfg.bs_spacing)
    cfg.ris_spacing_x = grab("geometry", "ris_spacing_x", float, cfg.ris_spacing_x)
    cfg.ris_spacing_y = grab("geometry", "ris_spacing_y", float, cfg.ris_spacing_y)
    cfg.ue_spacing = grab("geometry", "ue_spacing", float, cfg.ue_spacing)

    cfg.model = grab("channel", "model", str.strip, cfg.model)
    cfg.d_h = grab("channel", "d_h", int, cfg.d_h)
    cfg.d_g = grab("channel", "d_g", int, cfg.d_g)
    cfg.d_f = grab("channel", "d_f", int, cfg.d_f)
    cfg.gain_variance = grab("channel", "gain_variance", str.strip, cfg.gain_variance)
    cfg.grid_1d = grab("channel", "grid_1d", int, cfg.grid_1d)
    cfg.grid_2d = grab("channel", "grid_2d", int, cfg.grid_2d)
    cfg.correlation = grab("channel", "correlation", str.strip, cfg.correlation)

    cfg.plan = grab("training", "plan", str.strip, cfg.plan)
    cfg.t = grab("training", "t", t_value, cfg.t)
    cfg.include_direct = grab("training", "include_direct", boolean, cfg.include_direct)
    cfg.p = grab("training", "p", float, cfg.p)
    cfg.snr_db = grab("training", "snr_db", float, cfg.snr_db)

    variable = grab("sweep", "variable", str.strip, cfg.sweep_variable)
    cfg.sweep_values = grab("sweep", "values", floats, cfg.sweep_values)

    cfg.trials = grab("mc", "trials", int, cfg.trials)
    seed = grab("mc", "seed", int, None, required=True)
    cfg.estimator = grab("mc", "estimator", str.strip, cfg.estimator)

    cfg.output = grab("output", "path", str.strip, cfg.output)

    # cross-field validation; every violation is listed
    tokens = variable.split()
    if len(tokens) != 1:
        errors.append(f"[sweep] variable must name exactly one of {SWEEP_VARS}, "
                      f"got {len(tokens)}: {tokens}")
    else:
        cfg.sweep_variable = tokens[0]
        if cfg.sweep_variable not in SWEEP_VARS:
            errors.append(f"[sweep] unknown variable {cfg.sweep_variable!r}")
    if not cfg.sweep_values:
        errors.append("[sweep] values must be nonempty")
    if cfg.model not in MODELS:
        errors.append(f"[channel] model must be one of {MODELS}")
    if cfg.gain_variance not in ("unit", "one_over_d"):
        errors.append("[channel] gain_variance must be 'unit' or 'one_over_d'")
    if cfg.plan not in PLAN_KINDS:
        errors.append(f"[training] plan must be one of {PLAN_KINDS}")
    if cfg.estimator not in ESTIMATORS:
        errors.append(f"[mc] estimator must be one of {ESTIMATORS}")
    if cfg.trials < 1:
        errors.append("[mc] trials must be >= 1")
    if cfg.plan == "onehot" and cfg.include_direct:
        errors.append("[training] the one-hot plan cannot include the direct column")
    if seed is not None:
        cfg.seed = seed
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


@dataclass(frozen=True)
class ResultRow:
    sweep_var: str
    value: float
    model: str
    mean_diag_db: Optional[float]
    mse_db: Optional[float]
    realizations: int
    skipped: int

    def csv(self) -> str:
        def fmt(x):
            return "" if x is None else format(x, ".17g")

        return (f"{self.sweep_var},{fmt(self.value)},{self.model},"
                f"{fmt(self.mean_diag_db)},{fmt(self.mse_db)},"
                f"{self.realizations},{self.skipped}")


def _build_plan(cfg: ExperimentConfig, geometry, t, sigma2, rng_plan):
    k, n = geometry.k_total, geometry.n
    if t % k:
        raise ConfigError(f"T = {t} is not divisible by K = {k}")
    blocks = t // k
    if cfg.plan == "dft":
        psi = dft_ris_sequence(blocks, n)
        if not cfg.include_direct:
            psi = psi[:, 1:]
    elif cfg.plan == "hadamard":
        psi = hadamard_ris_sequence(blocks, n)
        if not cfg.include_direct:
            psi = psi[:, 1:]
    elif cfg.plan == "onehot":
        if blocks != n:
            raise ConfigError(f"one-hot plan needs T = K*N, got T = {t}")
        psi = one_hot_ris_sequence(n)
    else:
        psi = random_ris_sequence(blocks, n, rng_plan, cfg.include_direct)
    return TrainingPlan.block_repeat(k, psi, include_direct=cfg.include_direct,
                                     P=cfg.p, sigma2=sigma2)


def _resolve_point(cfg: ExperimentConfig, value):
    """Geometry, path counts, T, and sigma2 at one sweep point."""
    var = cfg.sweep_variable
    d_h, d_g, d_f = cfg.d_h, cfg.d_g, cfg.d_f
    snr_db = cfg.snr_db
    n_override = None
    if var == "snr":
        snr_db = float(value)
    elif var == "d_h":
        d_h = int(value)
    elif var == "d_g":
        d_g = int(value)
    elif var == "d_f":
        d_f = int(value)
    elif var == "n":
        n_override = int(value)
    geometry = cfg.geometry(n_override)
    if var == "t":
        t = int(value)
    elif cfg.t is not None:
        t = cfg.t
    else:
        cols = geometry.n + 1 if cfg.include_direct else geometry.n
        t = geometry.k_total * cols
    sigma2 = cfg.p * 10.0 ** (-snr_db / 10.0)
    return geometry, d_h, d_g, d_f, t, sigma2


def _load_correlation(cfg: ExperimentConfig, geometry) -> CorrelationModel:
    if not cfg.correlation:
        var_hd = 1.0 if cfg.include_direct else None
        return CorrelationModel.uncorrelated(geometry, var_hd=var_hd)
    data = np.load(cfg.correlation)
    return CorrelationModel(
        R_hb=data["R_hb"], R_hr=data["R_hr"], R_gu=data["R_gu"],
        R_gr=data["R_gr"],
        R_hdb=data["R_hdb"] if "R_hdb" in data else None,
        R_hdu=data["R_hdu"] if "R_hdu" in data else None,
    )


def _map_trials(fn, trials, threads):
    """Evaluate fn(trial) for every trial, reducing in trial order."""
    if threads <= 1:
        return [fn(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def _write_output(cfg: ExperimentConfig, rows):
    text = CSV_HEADER + "\n" + "".join(row.csv() + "\n" for row in rows)
    out_dir = os.path.dirname(cfg.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    _write_config_echo(cfg)
    return text


def _write_config_echo(cfg: ExperimentConfig):
    """Write the effective (defaults-applied) config alongside the output."""
    cp = configparser.ConfigParser()
    cp["geometry"] = {
        "m": str(cfg.m), "n_x": str(cfg.n_x), "n_y": str(cfg.n_y),
        "ue_antennas": " ".join(map(str, cfg.ue_antennas)),
        "bs_spacing": repr(cfg.bs_spacing),
        "ris_spacing_x": repr(cfg.ris_spacing_x),
        "ris_spacing_y": repr(cfg.ris_spacing_y),
        "ue_spacing": repr(cfg.ue_spacing),
    }
    cp["channel"] = {
        "model": cfg.model, "d_h": str(cfg.d_h), "d_g": str(cfg.d_g),
        "d_f": str(cfg.d_f), "gain_variance": cfg.gain_variance,
        "grid_1d": str(cfg.grid_1d), "grid_2d": str(cfg.grid_2d),
        "correlation": cfg.correlation,
    }
    cp["training"] = {
        "plan": cfg.plan, "t": "auto" if cfg.t is None else str(cfg.t),
        "include_direct": str(cfg.include_direct).lower(),
        "p": repr(cfg.p), "snr_db": repr(cfg.snr_db),
    }
    cp["sweep"] = {"variable": cfg.sweep_variable,
                   "values": " ".join(format(v, ".17g") for v in cfg.sweep_values)}
    cp["mc"] = {"trials": str(cfg.trials), "seed": str(cfg.seed),
                "estimator": cfg.estimator}
    cp["output"] = {"path": cfg.output}
    buf = io.StringIO()
    cp.write(buf)
    with open(cfg.output + ".effective.ini", "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def _db_or_none(x):
    return None if x is None or x <= 0 else 10.0 * np.log10(x)


def run_crb_sweep(cfg: ExperimentConfig, threads: int = 1):
    """Average unstructured/structured CRBs over random channel realizations.

    One row per (sweep value, model). Geometric realizations draw fresh
    AoAs/AoDs and gains each trial; draws with a singular FIM are skipped
    and counted rather than aborting the row.
    """
    rows = []
    for vi, value in enumerate(cfg.sweep_values):
        geometry, d_h, d_g, d_f, t, sigma2 = _resolve_point(cfg, value)
        rng_plan = np.random.default_rng([cfg.seed, vi])
        plan = _build_plan(cfg, geometry, t, sigma2, rng_plan)
        operator = assemble_measurement(plan, geometry)
        if cfg.model in ("unstructured", "both"):
            try:
                rep = crb_unstructured(operator, plan.P, sigma2,
                                       return_matrix=False)
                rows.append(ResultRow(cfg.sweep_variable, value, "unstructured",
                                      rep.mean_diag_db, None, 1, 0))
            except IdentifiabilityError:
                rows.append(ResultRow(cfg.sweep_variable, value, "unstructured",
                                      None, None, 0, 1))
        if cfg.model in ("geometric", "both"):
            include_f = d_f if cfg.include_direct else 0

            def trial(i):
                rng = np.random.default_rng([cfg.seed, vi, i])
                params = draw_geometric_params(geometry, d_h, d_g, include_f,
                                               rng, cfg.gain_variance)
                rep = crb_structured(params, plan, geometry, sigma2,
                                     operator=operator, return_matrix=False)
                return None if rep.ill_conditioned else rep.mean_diag

            results = _map_trials(trial, cfg.trials, threads)
            kept = [r for r in results if r is not None]
            skipped = cfg.trials - len(kept)
            mean = float(np.mean(kept)) if kept else None
            rows.append(ResultRow(cfg.sweep_variable, value, "geometric",
                                  _db_or_none(mean), None, len(kept), skipped))
    _write_output(cfg, rows)
    return rows


def run_mc_mse(cfg: ExperimentConfig, threads: int = 1):
    """Monte Carlo estimator MSE alongside the unstructured CRB.

    Per trial: draw a channel, simulate training, run the configured
    estimator, and accumulate the composite-channel squared error. The MSE
    is reported per real coordinate so it is directly comparable to the
    CRB mean-diagonal metric.
    """
    rows = []
    for vi, value in enumerate(cfg.sweep_values):
        geometry, d_h, d_g, d_f, t, sigma2 = _resolve_point(cfg, value)
        rng_plan = np.random.default_rng([cfg.seed, vi])
        plan = _build_plan(cfg, geometry, t, sigma2, rng_plan)
        operator = assemble_measurement(plan, geometry)
        corr = _load_correlation(cfg, geometry)
        prior = composite_covariance(corr, geometry) if cfg.estimator == "lmmse" \
            else None
        try:
            crb_db = crb_unstructured(operator, plan.P, sigma2,
                                      return_matrix=False).mean_diag_db
        except IdentifiabilityError:
            crb_db = None
        dim = geometry.composite_dim(cfg.include_direct)
        include_f = d_f if cfg.include_direct else 0
        use_geometric = cfg.model == "geometric"

        def trial(i):
            rng = np.random.default_rng([cfg.seed, vi, i])
            if use_geometric:
                params = draw_geometric_params(geometry, d_h, d_g, include_f,
                                               rng, cfg.gain_variance)
                channels = synth_geometric(params, geometry)
            else:
                channels = synth_unstructured(corr, geometry, rng)
            h = composite_vector(channels, cfg.include_direct)
            y = simulate_uplink(channels, plan, rng, operator=operator)
            try:
                if cfg.estimator == "lmmse":
                    h_hat = lmmse_estimate(y, operator, prior, plan.P, sigma2).h_hat
                else:
                    h_hat = ls_estimate(y, operator, plan.P, sigma2).h_hat
            except IdentifiabilityError:
                return None
            return float(np.sum(np.abs(h_hat - h) ** 2))

        results = _map_trials(trial, cfg.trials, threads)
        kept = [r for r in results if r is not None]
        skipped = cfg.trials - len(kept)
        mse = sum(kept) / (len(kept) * 2 * dim) if kept else None
        rows.append(ResultRow(cfg.sweep_variable, value, cfg.estimator,
                              crb_db, _db_or_none(mse), len(kept), skipped))
    _write_output(cfg, rows)
    return rows


def run_synth(cfg: ExperimentConfig, threads: int = 1):
    """Dump one channel realization plus its training plan for debugging."""
    value = cfg.sweep_values[0]
    geometry, d_h, d_g, d_f, t, sigma2 = _resolve_point(cfg, value)
    rng_plan = np.random.default_rng([cfg.seed, 0])
    plan = _build_plan(cfg, geometry, t, sigma2, rng_plan)
    rng = np.random.default_rng([cfg.seed, 0, 0])
    if cfg.model == "unstructured":
        channels = synth_unstructured(_load_correlation(cfg, geometry), geometry, rng)
    else:
        include_f = d_f if cfg.include_direct else 0
        params = draw_geometric_params(geometry, d_h, d_g, include_f, rng,
                                       cfg.gain_variance)
        channels = synth_geometric(params, geometry)
    payload = {
        "H": channels.H,
        "X": plan.X,
        "Psi": plan.Psi,
        "Hc": channels.composite(cfg.include_direct),
        "include_direct": np.array(cfg.include_direct),
        "P": np.array(plan.P),
        "sigma2": np.array(plan.sigma2),
        "protocol": np.array(plan.protocol),
    }
    for u, g in enumerate(channels.G):
        payload[f"G_{u}"] = g
    if channels.Hd is not None:
        for u, hd in enumerate(channels.Hd):
            payload[f"Hd_{u}"] = hd
    out = cfg.output
    out_dir = os.path.dirname(out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    np.savez(out, **payload)
    _write_config_echo(cfg)
    return payload
