"""Command-line front end: ``qmpath {simulate,mlp,qnd,zeno,verify}``.

Parameters come from an INI file (one section per subcommand), from a
``manifest.json`` written by an earlier run, and from ``--set key=value``
overrides, in that order. Every run writes ``manifest.json`` holding the
fully resolved parameters; passing it back via ``--config`` reproduces the
outputs byte for byte.

Exit codes: 0 success, 1 verify failure, 2 config error, 3 empty
postselection, 4 boundary-value solver did not converge.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, io, mcsim, mlp, qnd, verify, zeno
from .core import QubitParams, SimConfig, bloch, stochastic_hamiltonian

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_EMPTY, EXIT_BVP = 0, 1, 2, 3, 4
FORMATS = ("csv", "json")


class ConfigError(Exception):
    """Invalid configuration; ``where`` names the file, line and key when known."""

    def __init__(self, message, where=""):
        super().__init__(f"{where}: {message}" if where else message)


# ------------------------------------------------------------------ value types

def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _bool(s):
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s):
    return [float(v) for v in str(s).split(",") if v.strip()]


def _vec3(s):
    v = _floats(s)
    if len(v) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {s!r}")
    return v


_ENERGY = re.compile(r"^\s*(Ec)?\s*([+-]?\s*[0-9.eE+-]+)?\s*$")


def parse_energy(token: str, e_c: float) -> float:
    """``"Ec"``, ``"Ec-0.01"``, ``"Ec+1e-3"`` or a plain number."""
    m = _ENERGY.match(token)
    if not m or not (m.group(1) or m.group(2)):
        raise ValueError(f"bad energy token {token!r}")
    offset = float(m.group(2).replace(" ", "")) if m.group(2) else 0.0
    return (e_c if m.group(1) else 0.0) + offset


def _energies(s):
    tokens = [t.strip() for t in str(s).split(",") if t.strip()]
    for t in tokens:
        parse_energy(t, 0.0)
    if not tokens:
        raise ValueError("energy list is empty")
    return tokens


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ",".join(_render(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Key:
    parse: object
    default: str
    help: str


_QUBIT = {
    "epsilon": Key(_float, "0.0", "detuning epsilon (1/time)"),
    "delta": Key(_float, "0.0", "tunneling rate delta (1/time)"),
    "tau": Key(_float, "1.0", "characteristic measurement time tau"),
}

SCHEMA = {
    "simulate": {
        **_QUBIT,
        "epsilon": Key(_float, "0.5", "detuning epsilon (1/time)"),
        "q_initial": Key(_vec3, "1,0,0", "preselected Bloch vector x,y,z"),
        "q_final": Key(_vec3, "0.682246716226592,0.21104364050601487,0.7",
                       "postselection target x,y,z"),
        "horizon": Key(_float, "0.6", "final time T"),
        "dt": Key(_float, "0.01", "time step"),
        "n_traj": Key(_int, "10000", "raw trajectories (budget when n_select > 0)"),
        "n_select": Key(_int, "0", "stop once this many pass postselection (0 = keep all)"),
        "lam": Key(_float, "0.02", "postselection radius lambda"),
        "seed": Key(_int, "0", "random seed (unsigned 64-bit)"),
        "thin": Key(_int, "1", "store every thin-th time step"),
        "write_ensemble": Key(_bool, "false", "also write the postselected trajectories"),
    },
    "mlp": {
        **_QUBIT,
        "delta": Key(_float, "-0.5", "tunneling rate delta (1/time)"),
        "q_initial": Key(_vec3, "1,0,0", "initial Bloch vector"),
        "q_final": Key(_vec3, "0.8741572761215378,0,0.4856429311786321", "final Bloch vector"),
        "horizon": Key(_float, "0.6", "final time T"),
        "dt": Key(_float, "0.001", "RK4 step"),
        "tol": Key(_float, "1e-8", "boundary residual tolerance"),
        "max_iter": Key(_int, "60", "Gauss-Newton iterations per start"),
    },
    "qnd": {
        **_QUBIT,
        "q_initial": Key(_vec3, "0.9797958971132712,0,0.2", "initial Bloch vector"),
        "z_final": Key(_float, "0.5", "final z"),
        "horizon": Key(_float, "0.5", "final time T of the path"),
        "p_xi": Key(_float, "0.0", "free initial momentum p_x"),
        "p_yi": Key(_float, "0.0", "free initial momentum p_y"),
        "n_points": Key(_int, "201", "samples along the path"),
        "profile_horizons": Key(_floats, "0.01,0.5,2", "horizons for final-state profiles"),
        "profile_points": Key(_int, "401", "z_F samples per profile"),
        "profile_z_max": Key(_float, "0.999", "profile covers [-z_max, z_max]"),
    },
    "zeno": {
        "delta": Key(_float, "0.2", "tunneling rate delta"),
        "tau": Key(_float, "1.0", "measurement time tau"),
        "energies": Key(_energies, "Ec-0.01,Ec,0,0.01",
                        "portrait energies; 'Ec' denotes the critical energy"),
        "theta_points": Key(_int, "721", "theta samples per curve"),
        "cutoff": Key(_float, "0.001", "distance kept from the poles"),
        "instanton_points": Key(_int, "400", "samples of the instanton comparison"),
        "table": Key(_bool, "false", "traversal time and action per energy (upper branch)"),
        "rate_check": Key(_bool, "false", "Monte Carlo jump-rate check (slow)"),
        "rate_total_time": Key(_float, "5000", "total simulated time for the rate check"),
        "rate_dt": Key(_float, "0.01", "time step for the rate check"),
        "rate_debounce": Key(_float, "5", "debounce window in units of tau"),
        "seed": Key(_int, "0", "random seed for the rate check"),
    },
    "verify": {
        "level": Key(_choice("quick", "full"), "quick", "quick skips Monte Carlo heavy checks"),
    },
}


# ------------------------------------------------------------------ config loading

def _line_of(text: str, section: str | None, key: str) -> int | None:
    """Line number of ``key`` in an INI section or a JSON document."""
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif section is None:
            if re.search(rf'"{re.escape(key)}"\s*:', s):
                return n
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return None


def load_config(command: str, path=None, overrides=()) -> dict:
    """Resolve the parameters of ``command`` (strings in, typed values out)."""
    schema = SCHEMA[command]
    raw = {k: (v.default, "default") for k, v in schema.items()}
    text = ""
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(str(exc), str(path)) from exc
        if path.suffix == ".json":
            values = _read_manifest(path, text, command)
            for k, v in values.items():
                where = f"{path}:{_line_of(text, None, k) or '?'}: [{command}] {k}"
                if k not in schema:
                    raise ConfigError("unknown key", where)
                raw[k] = (v, where)
        else:
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
            parser.optionxform = str
            try:
                parser.read_string(text, source=str(path))
            except configparser.Error as exc:
                raise ConfigError(str(exc).replace("\n", " "), str(path)) from exc
            for sec in parser.sections():
                if sec not in SCHEMA:
                    raise ConfigError(f"unknown section [{sec}]",
                                      f"{path}:{_section_line(text, sec)}")
            if parser.has_section(command):
                for k, v in parser.items(command):
                    where = f"{path}:{_line_of(text, command, k) or '?'}: [{command}] {k}"
                    if k not in schema:
                        raise ConfigError("unknown key", where)
                    raw[k] = (v, where)
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if "." in key:
            sec, key = key.split(".", 1)
            if sec != command:
                raise ConfigError(f"override targets section [{sec}], not [{command}]",
                                  f"--set {item}")
        if not sep or key not in schema:
            raise ConfigError("expected key=value with a known key", f"--set {item}")
        raw[key] = (value.strip(), f"--set {item}")
    out = {}
    for k, (value, where) in raw.items():
        try:
            out[k] = schema[k].parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), where if where != "default" else f"[{command}] {k}") from exc
    out["_where"] = {k: w for k, (_, w) in raw.items()}
    return out


def _section_line(text, sec):
    for n, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{sec}]":
            return n
    return "?"


def _read_manifest(path, text, command):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}") from exc
    if not isinstance(doc, dict) or "config" not in doc:
        raise ConfigError("a JSON config must be a manifest with a 'config' block", str(path))
    if doc.get("command", command) != command:
        raise ConfigError(f"manifest was written by '{doc['command']}', not '{command}'",
                          f"{path}:{_line_of(text, None, 'command') or '?'}")
    return {k: str(v) for k, v in doc["config"].items()}


def _where(cfg, key):
    return cfg["_where"].get(key, f"[?] {key}")


def _qubit(cfg, command):
    try:
        return QubitParams(cfg.get("epsilon", 0.0), cfg.get("delta", 0.0), cfg["tau"])
    except ValueError as exc:
        raise ConfigError(str(exc), _where(cfg, "tau")) from exc


def _state(cfg, key):
    try:
        return bloch(cfg[key])
    except ValueError as exc:
        raise ConfigError(str(exc), _where(cfg, key)) from exc


# ------------------------------------------------------------------ outputs

class Run:
    def __init__(self, command, cfg, out, fmt):
        self.command, self.cfg, self.fmt = command, cfg, fmt
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []

    def table(self, name, schema, columns, rows):
        path = io.write_table(self.out / f"{name}.csv", f"qmpath.{schema}", columns, rows,
                              self.fmt)
        self.files.append(path.name)

    def json(self, name, obj):
        path = io.write_json(self.out / f"{name}.json", obj)
        self.files.append(path.name)

    def manifest(self, **extra):
        values = {k: _render(v) for k, v in self.cfg.items() if not k.startswith("_")}
        io.write_json(self.out / "manifest.json", {
            "schema": "qmpath.manifest/1", "command": self.command, "version": __version__,
            "format": self.fmt, "config": values, "outputs": sorted(self.files), **extra})


def _path_rows(p: mlp.MostLikelyPath):
    return io.path_rows(p.times, p.q, p.p, p.readouts, p.hamiltonian)


# ------------------------------------------------------------------ subcommands

def cmd_simulate(cfg, run: Run, threads: int) -> int:
    params = _qubit(cfg, "simulate")
    qi, qf = _state(cfg, "q_initial"), _state(cfg, "q_final")
    try:
        config = SimConfig(dt=cfg["dt"], horizon=cfg["horizon"], n_traj=cfg["n_traj"],
                           lam=cfg["lam"], seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc), "[simulate]") from exc
    if cfg["thin"] < 1:
        raise ConfigError("thin must be at least 1", _where(cfg, "thin"))
    target = cfg["n_select"] if cfg["n_select"] > 0 else config.n_traj
    ens = mcsim.sample_postselected(qi, qf, config, params, n_select=target,
                                    max_raw=config.n_traj, thin=cfg["thin"], threads=threads)
    selection = {"n_raw": ens.n_raw, "n_selected": len(ens), "seed": config.seed,
                 "params": {"epsilon": params.epsilon, "delta": params.delta, "tau": params.tau},
                 "config": {"dt": config.dt, "horizon": config.horizon, "lam": config.lam,
                            "n_traj": config.n_traj, "n_select": cfg["n_select"]},
                 "q_initial": qi, "q_final": qf, "selected_indices": ens.indices}
    run.json("selection", selection)
    if len(ens) == 0:
        run.manifest(n_selected=0, n_raw=ens.n_raw)
        print(f"no trajectory out of {ens.n_raw} ended within lambda = {config.lam} of q_final",
              file=sys.stderr)
        return EXIT_EMPTY
    if cfg["write_ensemble"]:
        run.table("ensemble", "ensemble", io.ENSEMBLE_COLUMNS, list(io.ensemble_rows(ens)))
    run.table("median", "median", io.MEDIAN_COLUMNS, io.median_rows(mcsim.median_path(ens)))
    run.manifest(n_selected=len(ens), n_raw=ens.n_raw)
    print(f"selected {len(ens)} of {ens.n_raw} trajectories")
    return EXIT_OK


def cmd_mlp(cfg, run: Run, threads: int) -> int:
    params = _qubit(cfg, "mlp")
    qi, qf = _state(cfg, "q_initial"), _state(cfg, "q_final")
    try:
        path = mlp.shoot(qi, qf, cfg["horizon"], params, dt=cfg["dt"], tol=cfg["tol"],
                         max_iter=cfg["max_iter"])
    except mlp.ShootingError as exc:
        run.json("summary", {"converged": False, "best_residual": exc.best_residual,
                             "best_p0": exc.best_p0})
        run.manifest()
        print(f"{exc}; best p0 = {exc.best_p0}", file=sys.stderr)
        return EXIT_BVP
    except ValueError as exc:
        raise ConfigError(str(exc), "[mlp]") from exc
    run.table("path", "mlp_path", io.PATH_COLUMNS, _path_rows(path))
    run.json("summary", {"converged": True, "energy": path.energy, "action": path.action,
                         "residual": path.residual, "p0": path.p0, "branches": path.branches,
                         "q_initial": qi, "q_final": qf})
    run.manifest()
    print(f"converged: residual {path.residual:.3e}, action {path.action:.10g}, "
          f"energy {path.energy:.10g}")
    return EXIT_OK


def cmd_qnd(cfg, run: Run, threads: int) -> int:
    if cfg["delta"] != 0:
        raise ConfigError("closed-form paths need delta = 0", _where(cfg, "delta"))
    params = _qubit(cfg, "qnd")
    qi = _state(cfg, "q_initial")
    try:
        sol = qnd.solve_qnd(qi, cfg["z_final"], cfg["horizon"], params, cfg["p_xi"], cfg["p_yi"])
    except ValueError as exc:
        raise ConfigError(str(exc), _where(cfg, "z_final")) from exc
    t = np.linspace(0.0, cfg["horizon"], cfg["n_points"])
    q, p = sol.q_of_t(t), sol.p_of_t(t)
    r = np.full_like(t, sol.r_bar)
    run.table("path", "qnd_path", io.PATH_COLUMNS,
              io.path_rows(t, q, p, r, stochastic_hamiltonian(q, p, r, params)))
    zmax = cfg["profile_z_max"]
    if not 0 < zmax < 1 - qnd.Z_MARGIN:
        raise ConfigError(f"must lie in (0, {1 - qnd.Z_MARGIN})", _where(cfg, "profile_z_max"))
    grid = np.linspace(-zmax, zmax, cfg["profile_points"])
    profiles = []
    for k, horizon in enumerate(cfg["profile_horizons"]):
        name = f"profile_{k}"
        run.table(name, "qnd_profile", io.PROFILE_COLUMNS,
                  qnd.final_state_profile(qi[2], horizon, params.tau, grid))
        profiles.append({"file": name, "horizon": horizon})
    run.json("summary", {"r_bar": sol.r_bar, "action": sol.action, "q_final": sol.q_final,
                         "z_initial": qi[2], "z_final": cfg["z_final"], "profiles": profiles})
    run.manifest()
    print(f"r_bar {sol.r_bar:.17g}, action {sol.action:.17g}")
    return EXIT_OK


def cmd_zeno(cfg, run: Run, threads: int) -> int:
    try:
        params = zeno.ZenoParams(cfg["delta"], cfg["tau"])
    except ValueError as exc:
        raise ConfigError(str(exc), _where(cfg, "tau")) from exc
    e_c = zeno.critical_energy(params)
    energies = [parse_energy(tok, e_c) for tok in cfg["energies"]]
    cut = cfg["cutoff"]
    thetas = np.linspace(cut, math.pi - cut, cfg["theta_points"])
    rows = []
    for e in energies:
        for code, branch in ((1, zeno.UPPER), (-1, zeno.LOWER)):
            for th, pt in zeno.energy_curve(e, branch, params, thetas).samples:
                rows.append((e, code, th, pt))
    run.table("portrait", "zeno_portrait", io.PORTRAIT_COLUMNS, rows)
    summary = {"E_c": e_c, "energies": energies,
               "crosses": {_render(e): zeno.crosses(e, params) for e in energies}}
    if params.delta > 0:
        fp = zeno.fixed_point(params)
        summary["fixed_point"] = {"theta_s": fp.theta_s, "p_theta_s": fp.p_theta_s,
                                  "r_s": fp.r_s, "residual": fp.residual}
    run.json("fixed_point", summary)
    th = np.linspace(cut, math.pi - cut, cfg["instanton_points"])
    run.table("instanton", "zeno_instanton", io.INSTANTON_COLUMNS,
              np.column_stack([th, zeno.instanton(th, params, "exact"),
                               zeno.instanton(th, params, "approx")]))
    if cfg["table"]:
        table = []
        for e in energies:
            try:
                elapsed = zeno.traversal_time(cut, math.pi - cut, e, zeno.UPPER, params)
                action = zeno.path_action(cut, math.pi - cut, e, zeno.UPPER, params)
            except (ValueError, zeno.QuadratureDivergence):
                elapsed = action = float("nan")
            table.append((e, elapsed, action))
        run.table("traversal", "zeno_traversal", ("E", "T", "S"), table)
    if cfg["rate_check"]:
        res = mcsim.jump_rate(QubitParams(0.0, params.delta, params.tau), cfg["rate_total_time"],
                              dt=cfg["rate_dt"], debounce=cfg["rate_debounce"] * params.tau,
                              seed=cfg["seed"])
        run.json("rate", {"gamma_formula": zeno.switching_rate(params)["gamma"],
                          "gamma_empirical": res["gamma_empirical"], "n_jumps": res["n_jumps"],
                          "total_time": res["total_time"]})
    run.manifest()
    print(f"E_c = {e_c:.17g}; portrait with {len(energies)} energies")
    return EXIT_OK


def cmd_verify(cfg, run: Run, threads: int) -> int:
    results = verify.run_checks(cfg["level"], threads=threads,
                                progress=lambda r: print(r.line(), flush=True))
    failed = [r.name for r in results if not r.passed]
    run.json("report", {"level": cfg["level"], "passed": not failed, "failed": failed,
                        "checks": [{"name": r.name, "passed": r.passed, "details": r.details}
                                   for r in results]})
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "mlp": cmd_mlp, "qnd": cmd_qnd, "zeno": cmd_zeno,
            "verify": cmd_verify}

DESCRIPTIONS = {
    "simulate": "Monte Carlo ensemble, postselection and median path",
    "mlp": "most-likely path between two states by shooting",
    "qnd": "closed-form paths and final-state profiles without tunneling",
    "zeno": "one-angle phase portrait, fixed point and instanton",
    "verify": "run the cross-module consistency checks",
}


def _keys_help(command):
    lines = [f"keys of section [{command}] (settable via --set key=value):"]
    for k, spec in SCHEMA[command].items():
        lines.append(f"  {k:<18} {spec.help} (default: {spec.default})")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmpath", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qmpath {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name],
                           epilog=_keys_help(name),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, help="INI file or manifest.json of a previous run")
        p.add_argument("--out", type=Path, default=Path("qmpath-out"), help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--format", choices=FORMATS, default=None,
                       help="table format (default csv, or the manifest's)")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results unchanged)")
        if "seed" in SCHEMA[name]:
            p.add_argument("--seed", type=int, default=None, help="random seed")
        if name == "verify":
            p.add_argument("--level", choices=("quick", "full"), default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        if args.seed < 0 or args.seed >= 2**64:
            print("config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_CONFIG
        overrides.append(f"seed={args.seed}")
    if getattr(args, "level", None) is not None:
        overrides.append(f"level={args.level}")
    if args.threads < 1:
        print("config error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.command, args.config, overrides)
        fmt = args.format or _manifest_format(args.config) or "csv"
        run = Run(args.command, cfg, args.out, fmt)
        return COMMANDS[args.command](cfg, run, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _manifest_format(path):
    if path is None or Path(path).suffix != ".json":
        return None
    try:
        return json.loads(Path(path).read_text()).get("format")
    except (OSError, ValueError, AttributeError):
        return None


if __name__ == "__main__":
    sys.exit(main())
