"""Configuration-driven command line front end.

Experiments are declared in a TOML document with sections ``[model]``,
``[simulation]``, ``[estimation]``, ``[experiment]``, and ``[output]``
(see the README for the full grammar).  All randomness flows from the single
``experiment.seed``; rerunning a config reproduces the data files byte for
byte at any worker count.

Exit codes: 0 success, 1 runtime/I-O failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import math
import os
import sys
from dataclasses import dataclass

import numpy as np
import tomli

from . import __version__
from .analysis import run_clt_experiment, run_mse_experiment, write_clt_csv, write_mse_csv
from .estimate import TruncationPolicy, fit_multipole, plugin_bandwidth
from .harmonics import hilb_ratio
from .model import ModelError, ParametricFamily, SpharModel, build_parametric
from .simulate import SimulationPlan, simulate_multipole, simulate_panel, write_panel_csv

KINDS = ("mse", "clt", "plugin", "simulate", "hilb-check")


# -- config document ------------------------------------------------------------


def load_config(path: str) -> dict:
    """Read and parse a TOML config; OSError for I/O trouble, ValueError for syntax."""
    with open(path, "rb") as handle:
        raw = handle.read()
    try:
        return tomli.loads(raw.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ValueError(f"config does not parse: {exc}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ValueError(f"unsupported config value {value!r}")


def serialize_config(config: dict) -> str:
    """Emit the restricted config schema as TOML (sections of scalar/list keys)."""
    lines = []
    for key in sorted(k for k in config if not isinstance(config[k], dict)):
        lines.append(f"{key} = {_format_value(config[key])}")
    for section in sorted(k for k in config if isinstance(config[k], dict)):
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in sorted(config[section].items()):
            lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines).strip() + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()


# -- validation -----------------------------------------------------------------


class _Checker:
    def __init__(self, config):
        self.config = config
        self.problems: list[str] = []

    def section(self, name, required: bool = True) -> dict:
        value = self.config.get(name)
        if value is None:
            if required:
                self.problems.append(f"{name}: section is missing")
            return {}
        if not isinstance(value, dict):
            self.problems.append(f"{name}: must be a section")
            return {}
        return value

    def require(self, section, sec_name, key, types, predicate=None, hint=""):
        if key not in section:
            self.problems.append(f"{sec_name}.{key}: required key is missing{hint}")
            return None
        value = section[key]
        if isinstance(value, bool) and bool not in types:
            self.problems.append(f"{sec_name}.{key}: wrong type {type(value).__name__}")
            return None
        if not isinstance(value, types):
            self.problems.append(f"{sec_name}.{key}: wrong type {type(value).__name__}")
            return None
        if predicate is not None and not predicate(value):
            self.problems.append(f"{sec_name}.{key}: value {value!r} out of range{hint}")
            return None
        return value

    def optional(self, section, sec_name, key, types, default=None, predicate=None):
        if key not in section:
            return default
        return self.require(section, sec_name, key, types, predicate)


def _number_list(value):
    return isinstance(value, list) and value and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    )


def validate_config(config: dict) -> list[str]:
    """Full validation pass; returns one diagnostic per violated field."""
    checker = _Checker(config)
    experiment = checker.section("experiment")
    output_sec = checker.section("output", required=False)

    kind = checker.require(
        experiment, "experiment", "kind", (str,), lambda v: v in KINDS, f" (one of {KINDS})"
    )
    checker.require(experiment, "experiment", "seed", (int,), lambda v: v >= 0)

    if kind != "hilb-check":
        model_sec = checker.section("model")
        if model_sec:
            _validate_model(checker, model_sec)

    if kind in ("mse", "clt"):
        checker.require(experiment, "experiment", "N", (list,), _number_list)
        checker.require(experiment, "experiment", "B", (int,), lambda v: v >= 1)
        _validate_estimation(checker)
    if kind == "clt":
        locations = checker.require(experiment, "experiment", "locations", (list,), _number_list)
        if locations is not None and not all(-1.0 < v < 1.0 for v in locations):
            checker.problems.append("experiment.locations: values must lie strictly inside (-1, 1)")
    if kind == "plugin":
        _validate_simulation(checker, require_n=True)
        checker.optional(
            experiment,
            "experiment",
            "variant",
            (str,),
            predicate=lambda v: v in ("demeaned", "no_intercept"),
        )
        checker.optional(experiment, "experiment", "ell_min", (int,), predicate=lambda v: v >= 2)
        checker.optional(experiment, "experiment", "ell_max", (int,), predicate=lambda v: v >= 2)
    if kind == "simulate":
        _validate_simulation(checker, require_n=True)
    if kind == "hilb-check":
        checker.require(
            experiment, "experiment", "theta", (int, float), lambda v: 0.0 < v < math.pi
        )
        checker.require(experiment, "experiment", "degree_max", (int,), lambda v: v >= 1)

    if output_sec:
        checker.optional(output_sec, "output", "directory", (str,))
        formats = checker.optional(output_sec, "output", "formats", (list,))
        if formats is not None and formats != ["csv"]:
            checker.problems.append('output.formats: only ["csv"] is supported')
    return checker.problems


def _validate_model(checker: _Checker, model_sec: dict) -> None:
    explicit = "phi" in model_sec
    family = "G" in model_sec
    if explicit == family:
        checker.problems.append(
            "model: provide either an explicit table (phi, noise_spectrum) "
            "or family parameters (G, alpha_phi, ...)"
        )
        return
    try:
        build_model(model_sec)
    except ModelError as exc:
        checker.problems.append(f"model: {exc}")
    except (TypeError, ValueError) as exc:
        checker.problems.append(f"model: {exc}")


def _validate_estimation(checker: _Checker) -> None:
    section = checker.section("estimation")
    if not section:
        return
    mode = checker.require(
        section, "estimation", "truncation", (str,), lambda v: v in ("fixed", "rate")
    )
    if mode == "fixed":
        checker.require(section, "estimation", "level", (int,), lambda v: v >= 0)
    elif mode == "rate":
        checker.require(section, "estimation", "exponent", (int, float), lambda v: 0 < v < 1)
        checker.optional(
            section, "estimation", "coeff", (int, float), default=1.0, predicate=lambda v: v > 0
        )
    checker.optional(section, "estimation", "order", (int,), predicate=lambda v: v >= 1)


def _validate_simulation(checker: _Checker, require_n: bool) -> None:
    section = checker.section("simulation")
    if not section:
        return
    if require_n:
        checker.require(section, "simulation", "n", (int,), lambda v: v >= 2)
    checker.optional(section, "simulation", "degree_max", (int,), predicate=lambda v: v >= 0)
    checker.optional(
        section, "simulation", "init", (str,), predicate=lambda v: v in ("stationary", "burn-in")
    )
    checker.optional(section, "simulation", "burn_in", (int,), predicate=lambda v: v >= 0)


# -- builders -------------------------------------------------------------------


def build_model(model_sec: dict) -> SpharModel:
    margin = float(model_sec.get("margin", 0.05))
    if "phi" in model_sec:
        phi = np.asarray(model_sec["phi"], dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        noise = np.asarray(model_sec.get("noise_spectrum", ()), dtype=float)
        order = int(model_sec.get("order", phi.shape[1]))
        return SpharModel(
            order=order,
            degree_max=phi.shape[0] - 1,
            phi=phi,
            noise_spectrum=noise,
            margin=margin,
        )
    family = ParametricFamily(
        G=float(model_sec["G"]),
        l_star=int(model_sec.get("l_star", 0)),
        alpha_phi=float(model_sec.get("alpha_phi", 3.0)),
        G_Z=float(model_sec.get("G_Z", 1.0)),
        alpha_Z=float(model_sec.get("alpha_Z", 2.5)),
        order=int(model_sec.get("order", 1)),
        lag_weights=tuple(model_sec["lag_weights"]) if "lag_weights" in model_sec else None,
    )
    degree_max = int(model_sec.get("degree_max", 100))
    return build_parametric(family, degree_max, margin=margin)


def build_policy(estimation: dict) -> TruncationPolicy:
    if estimation.get("truncation", "rate") == "fixed":
        return TruncationPolicy.fixed(int(estimation["level"]))
    return TruncationPolicy.rate(
        float(estimation.get("coeff", 1.0)), float(estimation["exponent"])
    )


# -- manifest -------------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    version: str
    seed: int
    started_utc: str
    finished_utc: str
    outputs: tuple


def write_manifest(manifest: RunManifest, path: str) -> None:
    document = {
        "run": {
            "config_hash": manifest.config_hash,
            "version": manifest.version,
            "seed": manifest.seed,
            "started_utc": manifest.started_utc,
            "finished_utc": manifest.finished_utc,
            "outputs": list(manifest.outputs),
        }
    }
    with open(path, "w", newline="") as handle:
        handle.write(serialize_config(document))


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- experiment dispatch --------------------------------------------------------


def _run_experiment(config: dict, out_dir: str, workers: int, say) -> list[str]:
    experiment = config["experiment"]
    kind = experiment["kind"]
    seed = int(experiment["seed"])
    outputs: list[str] = []

    if kind == "hilb-check":
        theta = float(experiment["theta"])
        degree = int(experiment["degree_max"])
        ratio = hilb_ratio(theta, degree)
        limit = 2.0 / (math.pi * math.sin(theta))
        say(
            f"hilb-check: theta={theta:g} L={degree} ratio to 2/(pi sin theta) = {ratio:.6f}"
        )
        path = os.path.join(out_dir, "hilb.csv")
        with open(path, "w", newline="") as handle:
            handle.write("theta,degree_max,limit,ratio\n")
            handle.write(f"{theta:.17g},{degree},{limit:.17g},{ratio:.17g}\n")
        return ["hilb.csv"]

    model = build_model(config["model"])

    if kind == "simulate":
        plan = _plan_from_config(config, model, seed)
        panel = simulate_panel(plan, workers=workers)
        path = os.path.join(out_dir, "panel.csv")
        write_panel_csv(panel, path)
        say(f"simulated panel: degree_max={plan.degree_max} n={plan.n_steps}")
        return ["panel.csv"]

    if kind == "plugin":
        sim = config.get("simulation", {})
        n_steps = int(sim["n"])
        degree = int(sim.get("degree_max", model.degree_max))
        ell_min = int(experiment.get("ell_min", 2))
        ell_max = int(experiment.get("ell_max", degree))
        variant = experiment.get("variant", "demeaned")
        ells = np.arange(ell_min, ell_max + 1)
        values = np.array(
            [
                fit_multipole(
                    simulate_multipole(model, int(ell), n_steps, seed), 1, ell=int(ell)
                ).coef[0]
                for ell in ells
            ]
        )
        result = plugin_bandwidth(ells, values, variant=variant)
        say(f"plugin ({variant}): beta_hat={result.beta_hat:.4f} d_star={result.d_star:.4f}")
        path = os.path.join(out_dir, "plugin.csv")
        with open(path, "w", newline="") as handle:
            handle.write("variant,ell_min,ell_max,beta_hat,d_star\n")
            handle.write(
                f"{variant},{ell_min},{ell_max},{result.beta_hat:.17g},{result.d_star:.17g}\n"
            )
        return ["plugin.csv"]

    policy = build_policy(config.get("estimation", {}))
    n_list = [int(v) for v in experiment["N"]]
    B = int(experiment["B"])

    if kind == "mse":
        report = run_mse_experiment(model, n_list, policy, B, seed, workers=workers)
        path = os.path.join(out_dir, "mse.csv")
        write_mse_csv(report, path)
        for row in report.rows:
            say(
                f"N={row.n_effective}: variance={row.variance:.5f} bias={row.bias:.5f} "
                f"mse={row.mse:.5f}"
            )
        outputs.append("mse.csv")
    elif kind == "clt":
        locations = [float(z) for z in experiment["locations"]]
        report = run_clt_experiment(model, n_list, policy, locations, B, seed, workers=workers)
        write_clt_csv(
            report, os.path.join(out_dir, "clt.csv"), os.path.join(out_dir, "clt_raw.csv")
        )
        say(f"clt: distances in [{report.distances.min():.3f}, {report.distances.max():.3f}]")
        outputs.extend(["clt.csv", "clt_raw.csv"])
    return outputs


def _plan_from_config(config: dict, model: SpharModel, seed: int) -> SimulationPlan:
    sim = config.get("simulation", {})
    return SimulationPlan(
        model=model,
        n_steps=int(sim["n"]),
        seed=seed,
        degree_max=int(sim["degree_max"]) if "degree_max" in sim else None,
        init=sim.get("init", "stationary"),
        burn_in=int(sim["burn_in"]) if "burn_in" in sim else None,
    )


# -- entry point ----------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sphar",
        description="Simulate spherical autoregressions and reproduce their estimation diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
        ("run", "run the experiment described by a config"),
        ("validate", "check a config and report every violation"),
        ("simulate", "simulate the configured panel and export it as CSV"),
    ):
        cmd = sub.add_parser(name, help=blurb)
        cmd.add_argument("config", help="path to a TOML experiment config")
        cmd.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        cmd.add_argument("--out-dir", default=None, help="override output.directory")
        cmd.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    def say(message):
        if not args.quiet:
            print(message)

    try:
        config = load_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2

    problems = validate_config(config)
    if problems:
        for problem in problems:
            print(f"invalid config: {problem}", file=sys.stderr)
        return 2
    if args.command == "validate":
        say("config ok")
        return 0

    if args.command == "simulate":
        config = dict(config)
        config["experiment"] = dict(config["experiment"], kind="simulate")
        problems = validate_config(config)
        if problems:
            for problem in problems:
                print(f"invalid config: {problem}", file=sys.stderr)
            return 2

    out_dir = args.out_dir or config.get("output", {}).get("directory", "out")
    started = _utc_now()
    try:
        os.makedirs(out_dir, exist_ok=True)
        outputs = _run_experiment(config, out_dir, max(args.workers, 1), say)
    except (ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest = RunManifest(
        config_hash=config_hash(config),
        version=__version__,
        seed=int(config["experiment"]["seed"]),
        started_utc=started,
        finished_utc=_utc_now(),
        outputs=tuple(outputs),
    )
    write_manifest(manifest, os.path.join(out_dir, "manifest.toml"))
    say(f"wrote {', '.join(outputs)} and manifest.toml to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
