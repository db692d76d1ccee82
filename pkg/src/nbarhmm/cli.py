"""Command-line pipeline for weekly conflict-death panels.

Every subcommand reads one YAML run configuration, writes its artifacts to
the output directory and records a ``manifest.json`` holding the resolved
configuration, input hashes, output hashes, the seed and package versions.
``nbarhmm rerun MANIFEST`` replays a run and compares output hashes.

Exit codes: 0 success, 1 rerun mismatch, 2 validation failure, 3 numerical
failure, 4 retry budget exhausted. Errors are printed to stderr as one JSON
object.

Configuration schema (all sections optional except ``seed``)::

    seed: 12345                 # required, no wall-clock default
    output_dir: out             # relative to the config file
    inputs:
      events: events.csv        # ingest
      ceasefires: ceasefires.csv
      covariates: covariates.csv
      report: report.json       # frozen standardization (ingest, forecast)
      panel: panel.csv          # fit, states, curves, forecast
      params: published         # or a ParameterSet JSON (states, curves, forecast)
    prior: {sd: 20.0}
    mcmc: {n_iterations: 20000, n_burnin: 10000, thin: 1, proposal: spherical,
           initial_step: 0.05, adapt_interval: 50, adapt_factor: 1.1,
           target_accept: [0.3, 0.5]}
    fit: {covariates: null}     # optional subset of the panel design
    states: {sweeps: 50000, burn_fraction: 0.1, method: sampler}
    curves: {scenarios: null}   # {name: {covariate: value}}; null = defaults
    forecast: {horizon: 12, replicates: 1000, cap_fraction: 0.0006}
    simulate: {truth: published, n_countries: 5, n_weeks: 520, start: 1989-01-02,
               ceasefire_share: 0.4, ceasefire_rate: 0.01, cap_fraction: 0.0006,
               max_country_retries: 200}
    coverage: {truth: desk, replications: 30, n_countries: 10, n_weeks: 200,
               start: 1989-01-02, ceasefire_share: 0.8, ceasefire_rate: 0.02,
               init: truth, level: 0.95, workers: 1}
"""
from __future__ import annotations

import argparse
import copy
import datetime as dt
import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import yaml

from . import mcmc, panel, params, posterior, states, synthetic

logger = logging.getLogger("nbarhmm")

EXIT_OK, EXIT_MISMATCH, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_RETRY = 0, 1, 2, 3, 4
COMMANDS = ("ingest", "fit", "states", "curves", "forecast", "simulate", "coverage")
COMMAND_HELP = {
    "ingest": "build the weekly panel from event, ceasefire and covariate tables",
    "fit": "sample the posterior with adaptive Metropolis-within-Gibbs",
    "states": "smoothed state probabilities for each country-week",
    "curves": "covariate-only transition probability curves and scenarios",
    "forecast": "simulate future weekly counts and states",
    "simulate": "generate a synthetic dataset from known parameters",
    "coverage": "credible-interval coverage over simulated replications",
}
INPUT_KEYS = ("events", "ceasefires", "covariates", "report", "panel", "params")
MANIFEST = "manifest.json"

DEFAULTS = {
    "seed": None,
    "output_dir": "out",
    "inputs": {k: None for k in INPUT_KEYS},
    "prior": {"sd": posterior.DEFAULT_PRIOR_SD},
    "mcmc": {
        "n_iterations": 20000, "n_burnin": 10000, "thin": 1, "proposal": "spherical",
        "initial_step": 0.05, "adapt_interval": 50, "adapt_factor": 1.1,
        "target_accept": [0.3, 0.5], "groups": None,
    },
    "fit": {"covariates": None},
    "states": {"sweeps": 50000, "burn_fraction": 0.1, "method": "sampler"},
    "curves": {"scenarios": None},
    "forecast": {"horizon": 12, "replicates": 1000, "cap_fraction": synthetic.DEFAULT_CAP_FRACTION},
    "simulate": {
        "truth": "published", "n_countries": 5, "n_weeks": 520, "start": "1989-01-02",
        "ceasefire_share": 0.4, "ceasefire_rate": 0.01,
        "cap_fraction": synthetic.DEFAULT_CAP_FRACTION, "max_country_retries": 200,
    },
    "coverage": {
        "truth": "desk", "replications": 30, "n_countries": 10, "n_weeks": 200,
        "start": "1989-01-02", "ceasefire_share": 0.8, "ceasefire_rate": 0.02,
        "cap_fraction": synthetic.DEFAULT_CAP_FRACTION, "max_country_retries": 200,
        "init": "truth", "level": 0.95, "workers": 1,
    },
}

REQUIRED_INPUTS = {
    "ingest": ("events", "ceasefires", "covariates"),
    "fit": ("panel",),
    "states": ("panel", "params"),
    "curves": ("panel", "params"),
    "forecast": ("panel", "params"),
    "simulate": (),
    "coverage": (),
}


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------

def _merge(base: dict, update: dict, where="") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown configuration key {where}{key!r}")
        if isinstance(base[key], dict) and base[key] and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _set_path(data: dict, dotted: str, raw: str):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a mapping")
    node[keys[-1]] = yaml.safe_load(raw)


def _plain(value):
    """YAML dates become ISO strings so the config stays JSON-serializable."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, (dt.date, dt.datetime)):
        return value.isoformat()
    return value


def _resolve(value, base: Path):
    if value is None or value in ("published", "desk"):
        return value
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


@dataclass
class RunConfig:
    """Validated run configuration with paths made absolute."""

    data: dict
    source: str = None

    @classmethod
    def load(cls, path=None, overrides=(), base_dir=None, data=None) -> "RunConfig":
        if data is None:
            path = Path(path)
            try:
                data = yaml.safe_load(path.read_text()) or {}
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            base_dir = path.resolve().parent
        data = copy.deepcopy(data)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            _set_path(data, key.strip(), raw)
        merged = _merge(DEFAULTS, _plain(data))
        base_dir = Path(base_dir or ".").resolve()
        merged["output_dir"] = _resolve(merged["output_dir"], base_dir)
        for k in INPUT_KEYS:
            merged["inputs"][k] = _resolve(merged["inputs"][k], base_dir)
        for section in ("simulate", "coverage"):
            merged[section]["truth"] = _resolve(merged[section]["truth"], base_dir)
        return cls(merged, str(path) if path else None)

    def validate(self, command: str):
        d = self.data
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or d["seed"] < 0:
            raise ConfigError("seed must be an explicit non-negative integer")
        for key in REQUIRED_INPUTS[command]:
            if d["inputs"][key] is None:
                raise ConfigError(f"{command} needs inputs.{key}")
        for key, value in d["inputs"].items():
            if value not in (None, "published") and not Path(value).exists():
                raise ConfigError(f"inputs.{key}: {value} does not exist")
        for section in ("simulate", "coverage"):
            truth = d[section]["truth"]
            if truth not in ("published", "desk") and not Path(truth).exists():
                raise ConfigError(f"{section}.truth: {truth} does not exist")
        self.mcmc_config()

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def mcmc_config(self, seed=None) -> mcmc.McmcConfig:
        m = dict(self.data["mcmc"])
        m["target_accept"] = tuple(m["target_accept"])
        try:
            return mcmc.McmcConfig(seed=self.seed if seed is None else seed, **m)
        except TypeError as exc:
            raise ConfigError(f"mcmc: {exc}") from None

    def prior(self) -> posterior.PriorSpec:
        return posterior.PriorSpec(**self.data["prior"])


# -- manifest --------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("numpy", "scipy", "numba", "PyYAML"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    from . import __version__
    out["nbarhmm"] = __version__
    return out


def _input_hashes(cfg: RunConfig) -> dict:
    out = {}
    for key, value in cfg["inputs"].items():
        if value not in (None, "published"):
            out[key] = {"path": value, "sha256": sha256_file(value)}
    for section in ("simulate", "coverage"):
        truth = cfg[section]["truth"]
        if truth not in ("published", "desk"):
            out[f"{section}.truth"] = {"path": truth, "sha256": sha256_file(truth)}
    return out


def write_manifest(command, cfg: RunConfig, outputs, out_dir: Path, notes=None) -> dict:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.data,
        "inputs": _input_hashes(cfg),
        "outputs": {name: sha256_file(out_dir / name) for name in sorted(outputs)},
        "versions": _versions(),
        "notes": notes or [],
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- shared loading ----------------------------------------------------------------

def _report(cfg):
    path = cfg["inputs"]["report"]
    return panel.StandardizationReport.from_json(path) if path else None


def _panels(cfg):
    return panel.read_panel_csv(cfg["inputs"]["panel"], _report(cfg))


def _params(cfg, panels):
    source = cfg["inputs"]["params"]
    p = params.published_means() if source == "published" else params.ParameterSet.from_json(source)
    covs = panels[0].covariates
    if covs != p.covariates:
        panels = [q.restrict(p.covariates) for q in panels]
    return p, panels


# -- subcommands -------------------------------------------------------------------

def cmd_ingest(cfg, out: Path):
    inp = cfg["inputs"]
    panels, report = panel.ingest(inp["events"], inp["ceasefires"], inp["covariates"], _report(cfg))
    panel.write_panel_csv(panels, out / "panel.csv")
    report.to_json(out / "report.json")
    return ["panel.csv", "report.json"]


def cmd_fit(cfg, out: Path):
    panels = _panels(cfg)
    covs = cfg["fit"]["covariates"]
    if covs:
        panels = [p.restrict(covs) for p in panels]
    draws = mcmc.fit(panels, cfg.prior(), cfg.mcmc_config())
    draws.write_csv(out / "draws.csv")
    draws.write_summary(out / "summary.json")
    draws.posterior_mean().to_json(out / "params.json")
    files = ["draws.csv", "summary.json", "params.json"]
    try:
        diag = mcmc.diagnostics(draws)
    except ValueError as exc:
        logger.warning("diagnostics skipped: %s", exc)
    else:
        (out / "diagnostics.json").write_text(json.dumps(diag.to_dict(), indent=2) + "\n")
        files.append("diagnostics.json")
    return files


def cmd_states(cfg, out: Path):
    p, panels = _params(cfg, _panels(cfg))
    s = cfg["states"]
    post = states.decode_panels(p, panels, s["sweeps"], cfg.seed, s["method"], s["burn_fraction"])
    states.write_state_csv(post, out / "states.csv")
    return ["states.csv"]


def cmd_curves(cfg, out: Path):
    p, panels = _params(cfg, _panels(cfg))
    states.write_curves_csv(p, panels, out / "curves.csv")
    named = cfg["curves"]["scenarios"]
    if named is None:
        scen = states.default_scenarios(p.covariates)
    else:
        scen = {k: states.scenario_design(p.covariates, **(v or {})) for k, v in named.items()}
    states.write_scenario_curves_csv(p, scen, out / "scenario_curves.csv")
    return ["curves.csv", "scenario_curves.csv"]


def cmd_forecast(cfg, out: Path):
    p, panels = _params(cfg, _panels(cfg))
    f = cfg["forecast"]
    fc = states.forecast_panels(p, panels, f["horizon"], f["replicates"], cfg.seed, f["cap_fraction"])
    states.write_forecast_csv(fc, out / "forecast.csv")
    return ["forecast.csv"]


def _truth(source):
    if source == "published":
        return params.published_means()
    if source == "desk":
        return synthetic.desk_truth()
    return params.ParameterSet.from_json(source)


def cmd_simulate(cfg, out: Path):
    s = cfg["simulate"]
    truth = _truth(s["truth"])
    spec = synthetic.GeneratorSpec(truth, s["cap_fraction"], s["max_country_retries"])
    ds = synthetic.simulate_dataset(
        spec, s["n_countries"], s["n_weeks"], cfg.seed, s["start"],
        s["ceasefire_share"], s["ceasefire_rate"],
    )
    panel.write_events_csv(ds.events, out / "events.csv")
    panel.write_ceasefires_csv(ds.ceasefires, out / "ceasefires.csv")
    panel.write_covariates_csv(ds.covariates, out / "covariates.csv")
    panel.write_panel_csv(ds.panels, out / "panel.csv")
    ds.report.to_json(out / "report.json")
    truth.to_json(out / "truth.json")
    synthetic.write_states_csv(ds.panels, ds.states, out / "true_states.csv")
    return ["events.csv", "ceasefires.csv", "covariates.csv", "panel.csv", "report.json",
            "truth.json", "true_states.csv"]


def cmd_coverage(cfg, out: Path, threads=None):
    c = cfg["coverage"]
    truth = _truth(c["truth"])
    spec = synthetic.GeneratorSpec(truth, c["cap_fraction"], c["max_country_retries"])
    skel_seed, rep_seed = synthetic.as_seed_sequence(cfg.seed).spawn(2)
    skeletons, _ = synthetic.make_skeletons(
        c["n_countries"], c["n_weeks"], skel_seed, truth.covariates, c["start"], None,
        c["ceasefire_share"], c["ceasefire_rate"],
    )
    workers = c["workers"] if threads is None else max(1, min(c["workers"], threads))
    report = synthetic.coverage_study(
        spec, c["replications"], cfg.mcmc_config(), skeletons, seed=rep_seed,
        prior=cfg.prior(), init=c["init"], level=c["level"], workers=workers,
    )
    report.write_csv(out / "coverage.csv")
    report.write_long_csv(out / "coverage_long.csv")
    (out / "coverage.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return ["coverage.csv", "coverage_long.csv", "coverage.json"]


HANDLERS = {
    "ingest": cmd_ingest, "fit": cmd_fit, "states": cmd_states, "curves": cmd_curves,
    "forecast": cmd_forecast, "simulate": cmd_simulate, "coverage": cmd_coverage,
}


def run(command: str, cfg: RunConfig, threads=None) -> dict:
    """Validate, execute one subcommand and write its manifest."""
    cfg.validate(command)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", panel.IngestWarning)
        if command == "coverage":
            files = cmd_coverage(cfg, out, threads)
        else:
            files = HANDLERS[command](cfg, out)
    notes = [str(w.message) for w in caught if issubclass(w.category, panel.IngestWarning)]
    for n in notes:
        logger.warning(n)
    for w in caught:
        if not issubclass(w.category, panel.IngestWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return write_manifest(command, cfg, files, out, notes)


def rerun(manifest_path, out_dir=None, threads=None) -> dict:
    """Replay a manifest; returns ``{"identical": bool, "mismatched": [...]}``."""
    manifest = json.loads(Path(manifest_path).read_text())
    data = copy.deepcopy(manifest["config"])
    if out_dir is not None:
        data["output_dir"] = str(Path(out_dir).resolve())
    for key, rec in manifest["inputs"].items():
        if not Path(rec["path"]).exists():
            raise ConfigError(f"input {key}: {rec['path']} no longer exists")
        if sha256_file(rec["path"]) != rec["sha256"]:
            raise ConfigError(f"input {key}: {rec['path']} changed since the manifest was written")
    cfg = RunConfig.load(data=data, base_dir=Path(manifest_path).resolve().parent)
    new = run(manifest["command"], cfg, threads)
    mismatched = sorted(
        name for name in set(manifest["outputs"]) | set(new["outputs"])
        if manifest["outputs"].get(name) != new["outputs"].get(name)
    )
    return {"identical": not mismatched, "mismatched": mismatched,
            "output_dir": cfg["output_dir"]}


# -- entry point ---------------------------------------------------------------------

def _exit_code(exc) -> int:
    if isinstance(exc, synthetic.RetryBudgetExceeded):
        return EXIT_RETRY
    if isinstance(exc, (FloatingPointError, ArithmeticError, RuntimeError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, KeyError, TypeError, OSError)):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def _error_json(exc, code) -> str:
    body = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, panel.PanelValidationError):
        body.update(file=None if exc.path is None else str(exc.path), line=exc.line, column=exc.column)
    return json.dumps(body)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nbarhmm", description=__doc__.split("\n\n")[0])
    ap.add_argument("--threads", type=int, default=None,
                    help="cap on worker processes and native thread pools")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry, e.g. mcmc.n_iterations=5000")
    p = sub.add_parser("rerun", help="replay a manifest and compare output hashes")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to this directory instead of the original")
    return ap


def _limit_threads(n):
    if n is None:
        return None
    if n < 1:
        raise ConfigError("--threads must be positive")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        limiter = _limit_threads(args.threads)
        try:
            if args.command == "rerun":
                result = rerun(args.manifest, args.out, args.threads)
                print(json.dumps(result))
                return EXIT_OK if result["identical"] else EXIT_MISMATCH
            overrides = list(args.set)
            if args.out:
                overrides.append(f"output_dir={json.dumps(str(Path(args.out).resolve()))}")
            if args.seed is not None:
                overrides.append(f"seed={args.seed}")
            cfg = RunConfig.load(args.config, overrides)
            manifest = run(args.command, cfg, args.threads)
            print(json.dumps({"output_dir": cfg["output_dir"], "outputs": manifest["outputs"]}))
            return EXIT_OK
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except Exception as exc:    # surfaced as JSON with a mapped exit code
        code = _exit_code(exc)
        print(_error_json(exc, code), file=sys.stderr)
        if args.verbose:
            logger.exception("failure")
        return code


if __name__ == "__main__":
    sys.exit(main())
