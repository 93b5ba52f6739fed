"""Command-line experiment runner.

Configs are INI files with one section per module. Unknown sections or keys
are rejected. Every run directory gets ``config.ini`` (the resolved settings)
and JSON outputs carrying ``seed`` and ``config_digest``.

Exit codes: 0 success, 2 config/usage error, 3 unsupported model,
4 numerical/runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import logging
import math
import statistics
import sys
import warnings
from pathlib import Path

import numpy as np

from . import equilibrium as eq
from . import measures as ms
from . import sampler as sp
from .errors import (ConfigError, NumericalError, RieszGasError, UnsupportedModelError,
                     UsageError)
from .kernel import GasModel, KernelSpec, PowerField, TableField

log = logging.getLogger("rieszgas")

EXIT_OK, EXIT_CONFIG, EXIT_UNSUPPORTED, EXIT_RUNTIME = 0, 2, 3, 4


# ------------------------------------------------------------------- config

def _int(lo=None, hi=None):
    def conv(s):
        v = int(s)
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ValueError(f"{v} outside [{lo}, {hi}]")
        return v
    return conv


def _float(positive=False):
    def conv(s):
        v = float(s)
        if not math.isfinite(v) or (positive and not v > 0):
            raise ValueError(f"{s!r} must be {'a positive' if positive else 'a finite'} number")
        return v
    return conv


def _choice(*opts):
    def conv(s):
        s = s.strip().lower()
        if s not in opts:
            raise ValueError(f"{s!r} not one of {', '.join(opts)}")
        return s
    return conv


def _bool(s):
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _int_list(lo):
    def conv(s):
        vals = tuple(int(t) for t in s.replace(" ", "").split(",") if t)
        if not vals or any(v < lo for v in vals):
            raise ValueError(f"need a non-empty list of integers >= {lo}")
        return vals
    return conv


def _str(s):
    return s.strip()


# section -> key -> (converter, default); default None means "unset"
SCHEMA = {
    "model": {
        "d": (_int(1, 16), 3),
        "kernel": (_choice("coulomb", "riesz"), "coulomb"),
        "alpha": (_float(positive=True), None),
        "coupling": (_float(positive=True), 1.0),
        "field": (_choice("quadratic", "power", "prescribed", "table"), "quadratic"),
        "power": (_float(positive=True), 2.0),
        "scale": (_float(), 1.0),
        "table": (_str, None),
        "table_hinge": (_float(positive=True), None),
    },
    "prescribe": {
        "target": (_choice("uniform-ball"), "uniform-ball"),
        "target_radius": (_float(positive=True), 1.0),
        "R": (_float(positive=True), 2.0),
        "table_points": (_int(16, 10**6), 4001),
        "table_rmax": (_float(positive=True), None),
        "grid_points": (_int(2, 10**6), 200),
    },
    "equilibrium": {
        "grid_points": (_int(2, 10**6), 200),
        "grid_max_factor": (_float(positive=True), 1.5),
        "profile_points": (_int(2, 10**6), 401),
    },
    "sampler": {
        "n": (_int(1, 10**6), 500),
        "schedule": (_choice("nsquared", "fixed"), "nsquared"),
        "beta_n": (_float(positive=True), None),
        "algorithm": (_choice("mala", "metropolis", "mixed"), "mala"),
        "step_size": (_float(positive=True), 0.05),
        "adapt": (_bool, True),
        "target_accept": (_float(positive=True), None),
        "sweeps": (_int(0), 1000),
        "burn_in": (_int(0), 0),
        "thin": (_int(1), 10),
        "seed": (_int(0, 2**64 - 1), 0),
        "init": (_choice("uniform-ball", "gibbs-field", "stratified"), "uniform-ball"),
        "init_radius": (_float(positive=True), 1.0),
        "grad_cap": (_float(positive=True), 1e8),
    },
    "study": {
        "n_list": (_int_list(1), (50, 100, 200, 400)),
        "seeds": (_int_list(0), None),
    },
    "diagnostics": {
        "ks": (_bool, True),
        "fm": (_bool, True),
        "histogram_bins": (_int(1, 10**6), 50),
    },
    "output": {
        "dir": (_str, "out"),
    },
}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(t) for t in v)
    return str(v)


class ExperimentConfig:
    """Typed, validated settings; ``cfg[section][key]``."""

    def __init__(self, values):
        self.values = values
        self._validate()

    @classmethod
    def defaults(cls):
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def from_text(cls, text, source="<config>"):
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        values = cls.defaults().values
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{source}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                conv = SCHEMA[section][key][0]
                try:
                    values[section][key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None
        return cls(values)

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_text(text, source=str(path))

    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def to_text(self, include_output=True):
        lines = []
        for section in SCHEMA:
            if section == "output" and not include_output:
                continue
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                v = self.values[section][key]
                if v is not None:
                    lines.append(f"{key} = {_fmt(v)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        """sha256 of the canonical text, output directory excluded."""
        return hashlib.sha256(self.to_text(include_output=False).encode()).hexdigest()

    def with_overrides(self, seed=None, out=None):
        values = {s: dict(v) for s, v in self.values.items()}
        if seed is not None:
            values["sampler"]["seed"] = seed
        if out is not None:
            values["output"]["dir"] = str(out)
        return ExperimentConfig(values)

    def _validate(self):
        m, s = self.values["model"], self.values["sampler"]
        if m["kernel"] == "riesz":
            if m["alpha"] is None or not 0 < m["alpha"] < m["d"]:
                raise ConfigError("[model] riesz kernel needs 0 < alpha < d")
        if m["field"] == "table" and not m["table"]:
            raise ConfigError("[model] field = table needs table = PATH")
        if s["schedule"] == "fixed" and s["beta_n"] is None:
            raise ConfigError("[sampler] schedule = fixed needs beta_n")
        if s["target_accept"] is not None and not s["target_accept"] < 1:
            raise ConfigError("[sampler] target_accept must lie in (0, 1)")
        if s["burn_in"] > s["sweeps"]:
            raise ConfigError("[sampler] burn_in must not exceed sweeps")


# ------------------------------------------------------------ model builders

def _coulomb_like(cfg):
    m = cfg["model"]
    return m["d"] >= 3 and (m["kernel"] == "coulomb" or m["alpha"] == 2.0)


def build_kernel(cfg):
    m = cfg["model"]
    if m["kernel"] == "coulomb":
        return KernelSpec.coulomb(m["d"])
    return KernelSpec.riesz(m["d"], m["alpha"])


def _prescribed(cfg):
    m, p = cfg["model"], cfg["prescribe"]
    if not _coulomb_like(cfg):
        raise UnsupportedModelError("prescribed fields are built for the Coulomb kernel in d >= 3")
    target = eq.uniform_ball_density(m["d"], p["target_radius"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        field = eq.prescribed_field(target, 2, m["d"], p["R"], coupling=m["coupling"])
    r_max = p["table_rmax"] or 2.0 * max(math.sqrt(p["R"]), p["target_radius"])
    return target, field, field.tabulate(r_max, p["table_points"])


def read_table(path, hinge=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    if head[:2] != ["r", "V"]:
        raise ConfigError(f"{path}: table header must start with r,V")
    data = np.array([[float(t) for t in row] for row in rows[1:]])
    col = head.index("V_smooth") if hinge is not None and "V_smooth" in head else 1
    if hinge is not None and col == 1:
        raise ConfigError(f"{path}: table_hinge needs a V_smooth column")
    return TableField(data[:, 0], data[:, col], hinge=hinge)


def build_field(cfg):
    m = cfg["model"]
    if m["field"] == "quadratic":
        return PowerField(2.0)
    if m["field"] == "power":
        return PowerField(m["power"], m["scale"])
    if m["field"] == "prescribed":
        return _prescribed(cfg)[2]
    try:
        return read_table(m["table"], m["table_hinge"])
    except OSError as exc:
        raise ConfigError(f"cannot read table: {exc}") from None


def build_model(cfg):
    return GasModel(build_kernel(cfg), build_field(cfg), cfg["model"]["coupling"])


def equilibrium_reference(cfg, model):
    """(RadialCDF, sampler of mu_star) or (None, None) when no closed form applies."""
    m = cfg["model"]
    if not _coulomb_like(cfg):
        return None, None
    if m["field"] == "prescribed":
        r = cfg["prescribe"]["target_radius"]
        dens = eq.uniform_ball_density(m["d"], r)
        return ms.RadialCDF.power(r, m["d"]), dens.sample
    try:
        res = eq.solve_radial_coulomb(m["d"], model.field, m["coupling"])
    except UnsupportedModelError as exc:
        log.warning("no equilibrium reference: %s", exc)
        return None, None
    if res.R_star is not None:
        return ms.RadialCDF.power(res.R_star, m["d"]), res.density.sample
    return ms.radial_cdf_of_density(res.density), res.density.sample


def sampler_params(cfg, seed=None):
    s = cfg["sampler"]
    return sp.SamplerParams(algorithm=s["algorithm"], step_size=s["step_size"], adapt=s["adapt"],
                            target_accept=s["target_accept"], sweeps=s["sweeps"],
                            burn_in=s["burn_in"], seed=s["seed"] if seed is None else seed,
                            thin=s["thin"], grad_cap=s["grad_cap"])


def schedule_of(cfg):
    s = cfg["sampler"]
    if s["schedule"] == "fixed":
        return sp.AnnealSchedule.fixed(s["beta_n"])
    return sp.AnnealSchedule.nsquared()


# ----------------------------------------------------------------- commands

def _outdir(cfg):
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_text())
    return out


def _stamp(cfg, payload, seed=None):
    payload = dict(payload)
    payload["seed"] = cfg["sampler"]["seed"] if seed is None else seed
    payload["config_digest"] = cfg.digest()
    return payload


def _reference_sample(sample_fn, n, seed):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(1,))))
    return sample_fn(n, rng)


def compute_diagnostics(cfg, model, x, seed):
    dg = cfg["diagnostics"]
    cdf, sample_fn = equilibrium_reference(cfg, model)
    ref = None
    if dg["fm"] and sample_fn is not None:
        ref = _reference_sample(sample_fn, x.shape[0], seed)
    out = ms.diagnostics(x, cdf if dg["ks"] else None, ref, seed=seed)
    return out


def run_sample(cfg, out, n=None, seed=None, tag=""):
    """One chain; returns the diagnostics dict."""
    model = build_model(cfg)
    n = cfg["sampler"]["n"] if n is None else n
    seed = cfg["sampler"]["seed"] if seed is None else seed
    params = sampler_params(cfg, seed)
    init = cfg["sampler"]["init"]
    x0 = None
    if init == "uniform-ball":
        init_ss = np.random.SeedSequence(int(seed)).spawn(2)[0]
        x0 = sp.init_configuration(n, model, "uniform-ball",
                                   seed=np.random.Generator(np.random.PCG64(init_ss)),
                                   radius=cfg["sampler"]["init_radius"])
    log.info("sampling N=%d seed=%d sweeps=%d burn_in=%d", n, seed, params.sweeps, params.burn_in)
    res = sp.run_chain(model, n, schedule_of(cfg), params, init=x0 if x0 is not None else init)
    x = res.state.x
    sp.write_trace_csv(out / f"trace{tag}.csv", res.trace)
    sp.write_snapshot_csv(out / f"snapshot{tag}.csv", x)
    ms.write_histogram_csv(out / f"histogram{tag}.csv", x, cfg["diagnostics"]["histogram_bins"])
    diag = _stamp(cfg, compute_diagnostics(cfg, model, x, seed), seed)
    diag.update({"sweeps": params.sweeps, "burn_in": params.burn_in,
                 "accept_rate_rw": res.state.acceptance_rate("rw"),
                 "accept_rate_mala": res.state.acceptance_rate("mala")})
    ms.write_json(out / f"diagnostics{tag}.json", _clean(diag))
    return diag


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def cmd_sample(cfg):
    out = _outdir(cfg)
    return run_sample(cfg, out)


def cmd_equilibrium(cfg):
    m, e = cfg["model"], cfg["equilibrium"]
    if not _coulomb_like(cfg):
        raise UnsupportedModelError("equilibrium solver needs the Coulomb kernel in d >= 3")
    model = build_model(cfg)
    if not model.field.radial:
        raise UnsupportedModelError("equilibrium solver needs a radial field")
    res = eq.solve_radial_coulomb(m["d"], model.field, m["coupling"])
    out = _outdir(cfg)
    dens = res.density
    r = np.linspace(0.0, dens.R0, e["profile_points"])
    F = dens.cdf(r)
    with open(out / "density.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "M", "F"])
        for a, b, c in zip(r, dens.M(r), F):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
    summary = _stamp(cfg, res.summary())
    ms.write_json(out / "summary.json", summary)
    grid = np.linspace(0.0, e["grid_max_factor"] * dens.R0, e["grid_points"])
    el = eq.euler_lagrange_residual(dens, model, grid)
    report = _stamp(cfg, {"grid_points": int(grid.size), "grid_max": float(grid[-1]),
                          "on_support_max_dev": el.on_support_max_dev,
                          "off_support_min_excess": el.off_support_min_excess,
                          "fitted_C": el.fitted_C, "C_star": res.robin})
    ms.write_json(out / "el_residual.json", _clean(report))
    return summary


def cmd_prescribe(cfg):
    m, p = cfg["model"], cfg["prescribe"]
    target, field, table = _prescribed(cfg)
    if target.R0 > math.sqrt(p["R"]):
        log.warning("target support exceeds sqrt(R); the hinge is active on the support")
    out = _outdir(cfg)
    with open(out / "field_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "V", "V_smooth"])
        full = table.values + np.maximum(table.r**2 - p["R"], 0.0)
        for a, b, c in zip(table.r, full, table.values):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
    # check the table at its nodes against an independent evaluation of U
    nodes = np.unique(np.round(np.linspace(0, table.r.size - 1, p["grid_points"])).astype(int))
    grid = table.r[nodes]
    total = m["coupling"] * eq.radial_coulomb_potential(target, grid) + table.profile(grid)
    inner = grid <= math.sqrt(p["R"])
    # linear interpolation error midway between nodes
    mid = 0.5 * (table.r[nodes[:-1]] + table.r[nodes[:-1] + 1])
    exact_mid = field.profile(mid)
    report = _stamp(cfg, {
        "R": p["R"], "target": p["target"], "target_radius": p["target_radius"],
        "C": 0.0, "equality_radius": math.sqrt(p["R"]),
        "max_abs_residual_inside": float(np.max(np.abs(total[inner]))),
        "min_residual": float(np.min(total)),
        "grid_points": int(grid.size), "V0": float(table.values[0]),
        "max_interpolation_error": float(np.max(np.abs(table.profile(mid) - exact_mid))),
    })
    ms.write_json(out / "prescribe_report.json", report)
    return report


def cmd_convergence_study(cfg):
    st = cfg["study"]
    if not _coulomb_like(cfg):
        raise UnsupportedModelError("convergence study needs the Coulomb kernel in d >= 3")
    out = _outdir(cfg)
    seeds = st["seeds"] or (cfg["sampler"]["seed"],)
    runs = []
    for n in st["n_list"]:
        for seed in seeds:
            diag = run_sample(cfg, out, n=n, seed=seed, tag=f"_N{n}_s{seed}")
            runs.append((n, seed, diag))
    with open(out / "convergence_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "seed", "ks", "fm_distance", "max_radius"])
        for n, seed, dg in runs:
            w.writerow([n, seed, _cell(dg["ks"]), _cell(dg["fm_distance"]), _cell(dg["max_radius"])])
    table = []
    for n in st["n_list"]:
        rows = [dg for nn, _, dg in runs if nn == n]
        table.append({"N": n, **{k: _median([r[k] for r in rows])
                                 for k in ("ks", "fm_distance", "max_radius")}})
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "ks", "fm_distance", "max_radius"])
        for row in table:
            w.writerow([row["N"], _cell(row["ks"]), _cell(row["fm_distance"]), _cell(row["max_radius"])])
    ms.write_json(out / "convergence.json", _stamp(cfg, {"seeds": list(seeds), "rows": table}))
    return table


def _median(vals):
    vals = [v for v in vals if v is not None]
    return statistics.median(vals) if vals else None


def _cell(v):
    return "" if v is None else repr(float(v))


def cmd_diagnose(cfg, snapshot):
    model = build_model(cfg)
    x = sp.read_snapshot_csv(snapshot)
    if x.shape[1] != cfg["model"]["d"]:
        raise UsageError(f"snapshot has dimension {x.shape[1]}, config says {cfg['model']['d']}")
    out = _outdir(cfg)
    seed = cfg["sampler"]["seed"]
    diag = _stamp(cfg, compute_diagnostics(cfg, model, x, seed), seed)
    ms.write_histogram_csv(out / "histogram.csv", x, cfg["diagnostics"]["histogram_bins"])
    ms.write_json(out / "diagnostics.json", _clean(diag))
    return diag


# --------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="rieszgas", description="Riesz/Coulomb gas experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("sample", "equilibrium", "prescribe", "convergence-study", "diagnose"):
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", type=Path, help="INI config (defaults used when omitted)")
        sp_.add_argument("--seed", type=int, help="override [sampler] seed")
        sp_.add_argument("--out", type=Path, help="override [output] dir")
        sp_.add_argument("--threads", type=int, default=None, help="numba worker threads")
        if name == "diagnose":
            sp_.add_argument("--snapshot", type=Path, required=True)
    return p


def _set_threads(k):
    if k is None:
        return
    if k < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        import numba
    except ImportError:
        return
    numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig.defaults()
        cfg = cfg.with_overrides(seed=args.seed, out=args.out)
        _set_threads(args.threads)
        if args.command == "sample":
            cmd_sample(cfg)
        elif args.command == "equilibrium":
            cmd_equilibrium(cfg)
        elif args.command == "prescribe":
            cmd_prescribe(cfg)
        elif args.command == "convergence-study":
            cmd_convergence_study(cfg)
        else:
            cmd_diagnose(cfg, args.snapshot)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedModelError as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (NumericalError, RieszGasError, FloatingPointError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
