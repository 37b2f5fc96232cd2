"""Command-line entry point: ``sdemin --command density ...``.

Configuration comes from an optional INI file (sections ``[run]``,
``[drift]``, ``[r_grid]``) overridden by flags. Every run writes its CSV
results plus one ``<out>.manifest.json`` carrying the config hash, the seed
derivation rule and SHA-256 digests of the outputs.

Exit status: 0 success, 1 a validation command ran but its check failed,
2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, girsanov, malliavin, minlaw
from .drift import Bounds, Custom, DriftSpec, from_config
from .engine import default_workers, simulate
from .errors import ConfigError, DomainError, NumericError, SdeminError
from .paths import Grid, Path as SdePath, brownian_increments, euler_maruyama_batch, write_paths_csv
from .rng import MAX_SEED, SEED_RULE, stream_layout, stream_rng

COMMANDS = ("density", "validate-girsanov", "validate-malliavin", "perimeter", "dump-paths")
ESTIMATE_COMMANDS = COMMANDS[:4]
MIN_PATHS = 1000

RUN_KEYS = {"command", "n_paths", "n_steps", "seed", "workers", "refine", "out", "delta", "epsilon"}
R_GRID_KEYS = {"min", "max", "count"}
DRIFT_PARAM_KEYS = {"c", "scale", "amplitude", "frequency", "table", "b_bound", "db_bound", "d2b_bound"}


@dataclass
class RunConfig:
    command: str
    drift: dict = field(default_factory=lambda: {"family": "zero", "params": {}})
    n_paths: int = 10**6
    n_steps: int = 1024
    r_min: float = minlaw.DEFAULT_R_GRID[0]
    r_max: float = minlaw.DEFAULT_R_GRID[1]
    r_count: int = minlaw.DEFAULT_R_GRID[2]
    delta: float = 0.01
    epsilon: float = 0.02
    seed: int = 0
    workers: int = 1
    refine: bool = True
    out: str = ""

    def hashable(self) -> dict:
        """Config entries that determine the results (workers and out excluded)."""
        d = asdict(self)
        d.pop("workers")
        d.pop("out")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.hashable(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def grid(self) -> Grid:
        return Grid(self.n_steps)

    @property
    def r_grid(self) -> np.ndarray:
        return minlaw.r_grid_default(self.r_min, self.r_max, self.r_count)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdemin", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI file with [run], [drift], [r_grid] sections")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--drift", help="drift family: zero, constant, tanh, sine, custom")
    p.add_argument("--drift-param", action="append", default=[], metavar="NAME=VALUE",
                   help="drift parameter, repeatable (c, scale, amplitude, frequency, table, *_bound)")
    p.add_argument("--n-paths", type=int)
    p.add_argument("--n-steps", type=int)
    p.add_argument("--r-min", type=float)
    p.add_argument("--r-max", type=float)
    p.add_argument("--r-count", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--refine", dest="refine", action="store_true", default=None)
    p.add_argument("--no-refine", dest="refine", action="store_false")
    p.add_argument("--out")
    return p


def _read_ini(text: str) -> dict:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    known = {"run": RUN_KEYS, "drift": {"family"} | DRIFT_PARAM_KEYS, "r_grid": R_GRID_KEYS}
    values: dict = {}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]", section)
        for key, raw in cp.items(section):
            if key not in known[section]:
                raise ConfigError(f"unknown key {section}.{key}", f"{section}.{key}")
            values[(section, key)] = raw
    return values


def _convert(key: str, raw, kind):
    try:
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            if isinstance(raw, int) or str(raw).strip().lstrip("+-").isdigit():
                return int(raw)
            # accept 1e6 style counts
            f = float(raw)
            if not f.is_integer():
                raise ValueError(raw)
            return int(f)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {kind.__name__}", key) from None


def parse_config(argv=None, text: str | None = None) -> RunConfig:
    """Merge an INI file (or ``text``) with flags; flags win. Validates everything."""
    args = build_parser().parse_args(argv)
    file_vals = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}", "config") from None
    if text:
        try:
            file_vals = _read_ini(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file: {exc}", "config") from None

    def pick(flag_val, section, key, kind, default):
        if flag_val is not None:
            return _convert(key, flag_val, kind)
        if (section, key) in file_vals:
            return _convert(key, file_vals[(section, key)], kind)
        return default

    command = pick(args.command, "run", "command", str, None)
    if command is None:
        raise ConfigError("a command is required (--command or [run] command)", "command")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", "command")

    family = pick(args.drift, "drift", "family", str, "zero").lower()
    params = {k: raw for (sec, k), raw in file_vals.items() if sec == "drift" and k != "family"}
    for item in args.drift_param:
        if "=" not in item:
            raise ConfigError(f"--drift-param expects NAME=VALUE, got {item!r}", "drift-param")
        k, v = item.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in DRIFT_PARAM_KEYS:
            raise ConfigError(f"unknown drift parameter {k!r}", f"drift.{k}")
        params[k] = v.strip()
    for k, v in list(params.items()):
        if k != "table":
            params[k] = _convert(f"drift.{k}", v, float)

    cfg = RunConfig(
        command=command,
        drift={"family": family, "params": dict(sorted(params.items()))},
        n_paths=pick(args.n_paths, "run", "n_paths", int, RunConfig.n_paths),
        n_steps=pick(args.n_steps, "run", "n_steps", int, RunConfig.n_steps),
        r_min=pick(args.r_min, "r_grid", "min", float, RunConfig.r_min),
        r_max=pick(args.r_max, "r_grid", "max", float, RunConfig.r_max),
        r_count=pick(args.r_count, "r_grid", "count", int, RunConfig.r_count),
        delta=pick(args.delta, "run", "delta", float, RunConfig.delta),
        epsilon=pick(args.epsilon, "run", "epsilon", float, RunConfig.epsilon),
        seed=pick(args.seed, "run", "seed", int, RunConfig.seed),
        workers=pick(args.workers, "run", "workers", int, default_workers()),
        refine=pick(args.refine, "run", "refine", bool, RunConfig.refine),
        out=pick(args.out, "run", "out", str, ""),
    )
    if not cfg.out:
        cfg.out = f"sdemin_{command.replace('-', '_')}.csv"
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.command in ESTIMATE_COMMANDS and cfg.n_paths < MIN_PATHS:
        raise ConfigError(f"n_paths must be >= {MIN_PATHS} for {cfg.command}", "n_paths")
    if cfg.n_paths < 1:
        raise ConfigError("n_paths must be positive", "n_paths")
    if cfg.n_steps < 2 or cfg.n_steps & (cfg.n_steps - 1):
        raise ConfigError("n_steps must be a power of two (>= 2)", "n_steps")
    if not cfg.r_max < 0:
        raise ConfigError("r_max must be negative: the minimum law lives on (-inf, 0]", "r_max")
    if cfg.r_count < 1:
        raise ConfigError("r_count must be positive", "r_count")
    if cfg.r_count > 1 and not cfg.r_min < cfg.r_max:
        raise ConfigError("r_min must be below r_max", "r_min")
    if not cfg.delta > 0:
        raise ConfigError("delta must be positive", "delta")
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon must be positive", "epsilon")
    if cfg.command in ("validate-malliavin", "perimeter") and not cfg.r_max + cfg.epsilon < 0:
        raise ConfigError("r_max + epsilon must be negative", "epsilon")
    if not 0 <= cfg.seed <= MAX_SEED:
        raise ConfigError("seed must be a 64-bit unsigned integer", "seed")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1", "workers")
    spec = build_drift(cfg.drift)
    if cfg.drift["family"] != "custom":
        # echo defaulted drift parameters too
        cfg.drift["params"] = {k: float(v) for k, v in sorted(spec.params.items())}


def build_drift(desc: dict) -> DriftSpec:
    family = desc["family"]
    params = dict(desc["params"])
    try:
        if family == "custom":
            if "table" not in params:
                raise ConfigError("custom drift needs table=<csv of eta,b>", "drift.table")
            try:
                tab = np.loadtxt(params.pop("table"), delimiter=",", ndmin=2)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read drift table: {exc}", "drift.table") from None
            try:
                bounds = Bounds(params.pop("b_bound"), params.pop("db_bound"), params.pop("d2b_bound"))
            except KeyError as exc:
                raise ConfigError(f"custom drift needs declared {exc.args[0]}", f"drift.{exc.args[0]}") from None
            if params:
                raise ConfigError(f"unknown custom drift parameters {sorted(params)}", "drift")
            return Custom(tab[:, 0], tab[:, 1], bounds)
        return from_config(family, params)
    except DomainError as exc:
        raise ConfigError(str(exc), "drift") from None


# ---------------------------------------------------------------- commands


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}_{suffix}{out.suffix or '.csv'}")


def _write_rows(target: Path, header, rows) -> None:
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def cmd_density(cfg: RunConfig, spec: DriftSpec, out: Path) -> tuple[list[Path], bool, dict]:
    grid, r = cfg.grid, cfg.r_grid
    direct = simulate(spec, grid, cfg.n_paths, cfg.seed, measure="sde", refine=cfg.refine,
                      workers=cfg.workers)
    est_direct = minlaw.cdf_from_sample(direct, r, delta=cfg.delta, estimator="direct")
    del direct
    wiener = simulate(spec, grid, cfg.n_paths, cfg.seed, measure="wiener", refine=cfg.refine,
                      workers=cfg.workers)
    tal = minlaw.tally(wiener)
    ests = [
        est_direct,
        minlaw.cdf_from_sample(wiener, r, delta=cfg.delta, estimator="weighted", tal=tal),
        minlaw.survival_density(wiener, r, cfg.delta, tal=tal),
    ]
    notes = {"low_ess": bool(ests[1].meta["low_ess"]), "n_eff": ests[1].meta["n_eff"]}
    if np.all(r + cfg.epsilon < 0):
        smoothed = minlaw.band_densities(wiener, r, cfg.epsilon, tal=tal)
        # empty bands are reported, not fatal
        notes["degenerate_r"] = smoothed.meta["degenerate"]
        ests.append(smoothed)
    for e in ests:
        if not (np.all(np.isfinite(e.density)) and np.all(np.isfinite(e.cdf))):
            raise NumericError(f"non-finite {e.meta['estimator']} estimate")
    minlaw.write_density_csv(out, ests)
    return [out], True, notes


def cmd_validate_girsanov(cfg: RunConfig, spec: DriftSpec, out: Path) -> tuple[list[Path], bool, dict]:
    grids = [Grid(cfg.n_steps // f) for f in (64, 16, 4, 1) if cfg.n_steps // f >= 2]
    rep = girsanov.check_ito_identity(spec, cfg.n_paths, grids, cfg.seed)
    _write_rows(out, ("dt", "rms", "threshold", "passed"),
                [(dt, rms, rep.threshold, int(rep.passed)) for dt, rms in rep.rows()])
    mean, se = girsanov.weight_normalization(spec, cfg.n_paths, cfg.grid, cfg.seed, cfg.workers)
    norm_ok = abs(mean - 1.0) <= 3.0 * se or (se == 0.0 and mean == 1.0)
    out2 = _sibling(out, "normalization")
    _write_rows(out2, ("dt", "mean", "stderr", "passed"), [(cfg.grid.dt, mean, se, int(norm_ok))])
    return [out, out2], rep.passed and norm_ok, {"failures": rep.failures}


def cmd_validate_malliavin(cfg: RunConfig, spec: DriftSpec, out: Path) -> tuple[list[Path], bool, dict]:
    grid = cfg.grid
    fields = malliavin.standard_fields(grid)
    sample = simulate(spec, grid, cfg.n_paths, cfg.seed, measure="wiener", refine=True,
                      workers=cfg.workers, directions=malliavin.field_directions(fields))
    results, ok, degenerate = [], True, []
    for r in cfg.r_grid:
        for f in fields:
            res = malliavin.ibp_from_sample(sample, f, float(r), cfg.epsilon)
            res.field_id = f"{f.name}@r={float(r)!r}"
            # an empty band leaves the identity untested, which counts as a failed check
            if res.degenerate:
                degenerate.append(res.field_id)
                ok = False
            ok &= abs(res.residual) <= 3.0 * res.stderr
            results.append(res)
    malliavin.write_ibp_csv(out, results)
    rows = []
    for name, h in (("s", fields[0].terms[0].h), ("sin", fields[1].terms[0].h)):
        chk = malliavin.min_derivative_check(spec, grid, h, MIN_PATHS, cfg.seed, refine=cfg.refine)
        ok &= chk.max_error <= 1e-2
        rows.append((name, chk.n_guarded, chk.n_excluded, chk.max_error))
    out2 = _sibling(out, "gradient")
    _write_rows(out2, ("direction", "n_checked", "n_excluded", "max_abs_error"), rows)
    return [out, out2], ok, {"degenerate": degenerate}


def cmd_perimeter(cfg: RunConfig, spec: DriftSpec, out: Path) -> tuple[list[Path], bool, dict]:
    grid = cfg.grid
    fields = malliavin.standard_fields(grid)
    sample = simulate(spec, grid, cfg.n_paths, cfg.seed, measure="wiener", refine=True,
                      workers=cfg.workers, directions=malliavin.field_directions(fields))
    rows, ok, failures = [], True, []
    for r in cfg.r_grid:
        rep = malliavin.perimeter_from_sample(sample, float(r), fields, cfg.epsilon)
        ok &= rep.passed
        failures += [f"r={float(r):g} {msg}" for msg in rep.failures]
        for row in rep.rows:
            rows.append((float(r), row.field_id, row.value, row.stderr, rep.bound, rep.bound_stderr,
                         int(row.ok)))
    _write_rows(out, ("r", "field_id", "value", "stderr", "bound", "bound_stderr", "ok"), rows)
    return [out], ok, {"failures": failures}


def cmd_dump_paths(cfg: RunConfig, spec: DriftSpec, out: Path) -> tuple[list[Path], bool, dict]:
    grid = cfg.grid
    paths = []
    for sid, count in stream_layout(cfg.n_paths):
        dB = brownian_increments(stream_rng(cfg.seed, sid), count, grid)
        X = euler_maruyama_batch(spec, dB, grid.dt)
        paths.extend(SdePath(grid, X[i], dB[i]) for i in range(count))
    write_paths_csv(out, paths)
    return [out], True, {}


HANDLERS = {
    "density": cmd_density,
    "validate-girsanov": cmd_validate_girsanov,
    "validate-malliavin": cmd_validate_malliavin,
    "perimeter": cmd_perimeter,
    "dump-paths": cmd_dump_paths,
}


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def run(cfg: RunConfig) -> int:
    spec = build_drift(cfg.drift)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outputs, passed, notes = HANDLERS[cfg.command](cfg, spec, out)
    manifest = {
        "software_version": __version__,
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "seed_rule": SEED_RULE,
        "workers": cfg.workers,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "passed": passed,
        "notes": notes,
        "outputs": {p.name: sha256_file(p) for p in outputs},
    }
    manifest_path(out).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0 if passed else 1


def _error_record(status: int, kind: str, exc: Exception) -> int:
    record = {"status": status, "error": kind, "message": str(exc)}
    key = getattr(exc, "key", None)
    if key:
        record["key"] = key
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return status


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        return _error_record(2, "usage", exc)
    try:
        return run(cfg)
    except ConfigError as exc:
        return _error_record(2, "usage", exc)
    except (NumericError, FloatingPointError, SdeminError) as exc:
        return _error_record(3, "numeric", exc)


if __name__ == "__main__":
    sys.exit(main())
