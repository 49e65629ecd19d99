"""Batch front end: single points, parameter sweeps, oracle tables and operator dumps.

Configuration files are flat ``section.key = value`` lines; ``#`` starts a
comment. Grid values are a single number, a comma-separated list, or an
inclusive range ``start:stop:step``. See the README for the full grammar.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import ChannelModel
from .fock_ops import (
    FockDim,
    annihilation_matrix,
    build_observables,
    interval_operators,
    psd_sqrt,
    region_operators,
)
from .oracle import dw_rate_lossonly, holevo_lossonly, mutual_information_lossonly, plob_bound
from .protocol import HETERODYNE, HOMODYNE, ProtocolSpec
from .sdp import BACKENDS
from .solver import SolverOptions, key_rate

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config_text",
    "load_config",
    "grid_points",
    "run_keyrate",
    "run_oracle",
    "run_dump_operators",
    "format_csv",
    "main",
    "KEYRATE_COLUMNS",
    "ORACLE_COLUMNS",
]

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 2, 3

KEYRATE_COLUMNS = (
    "protocol", "L", "eta", "xi", "alpha", "delta_c", "delta_a", "delta_p", "beta", "Nc",
    "step1_value", "lower_bound", "p_pass", "delta_ec", "key_rate", "fw_iters",
    "max_residual", "wall_time_s", "status",
)
ORACLE_COLUMNS = ("protocol", "L", "alpha", "beta", "I_XZ", "holevo", "dw_rate", "plob")
DUMP_COLUMNS = ("name", "row", "col", "re", "im")

GRID_KEYS = ("L", "alpha", "xi", "beta", "delta_c", "delta_a", "delta_p")
GRID_DEFAULTS = {"L": (20.0,), "alpha": (0.4,), "xi": (0.0,), "beta": (0.95,),
                 "delta_c": (0.0,), "delta_a": (0.0,), "delta_p": (0.0,)}
SOLVER_KEYS = {"max_iters": int, "gap_tol": float, "eps_viol": float, "eps_pert_scale": float,
               "line_search_tol": float, "backend": str}


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass
class RunConfig:
    protocol: str = HOMODYNE
    grids: dict[str, tuple[float, ...]] = field(default_factory=lambda: dict(GRID_DEFAULTS))
    cutoff: int = 10
    eta_det: float = 1.0
    solver: dict = field(default_factory=dict)
    jobs: int = 1
    out: str | None = None

    def validate(self) -> "RunConfig":
        if self.protocol not in (HOMODYNE, HETERODYNE):
            raise ConfigError(f"protocol.detection: expected homodyne or heterodyne, got {self.protocol!r}")
        for key in GRID_KEYS:
            vals = self.grids.get(key, ())
            if len(vals) == 0:
                raise ConfigError(f"grid.{key}: grid is empty")
        checks = {
            "L": lambda v: v >= 0, "alpha": lambda v: v > 0, "xi": lambda v: v >= 0,
            "beta": lambda v: 0 < v <= 1, "delta_c": lambda v: v >= 0, "delta_a": lambda v: v >= 0,
            "delta_p": lambda v: 0 <= v <= np.pi / 4,
        }
        for key, ok in checks.items():
            for v in self.grids[key]:
                if not ok(v):
                    raise ConfigError(f"grid.{key}: value {v} out of range")
        if self.cutoff < 1 or self.cutoff > 40:
            raise ConfigError(f"fock.cutoff: expected an integer in [1, 40], got {self.cutoff}")
        if not 0 < self.eta_det <= 1:
            raise ConfigError(f"channel.eta_det: expected a value in (0, 1], got {self.eta_det}")
        if self.jobs < 1:
            raise ConfigError(f"run.jobs: expected a positive integer, got {self.jobs}")
        if "backend" in self.solver and self.solver["backend"] not in BACKENDS:
            raise ConfigError(f"solver.backend: expected one of {BACKENDS}, got {self.solver['backend']!r}")
        try:
            self.solver_options()
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from exc
        return self

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver)


def parse_values(text: str, where: str = "value") -> tuple[float, ...]:
    """Parse ``1.5``, ``0.3, 0.35`` or ``0.3:0.6:0.05`` (inclusive range)."""
    text = text.strip()
    if not text:
        return ()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ConfigError(f"{where}: range must be start:stop:step with step > 0 and stop >= start")
            start, stop, step = parts
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 12) for i in range(count))
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: cannot parse {text!r} as numbers") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, tuple[int, str]]:
    """Split a config file into ``{dotted.key: (line_number, raw_value)}``."""
    entries: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} needs a section prefix")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = (lineno, value)
    return entries


def _apply(cfg: RunConfig, key: str, value: str, where: str) -> None:
    section, _, name = key.partition(".")
    if section == "protocol" and name == "detection":
        cfg.protocol = value.strip().lower()
    elif section == "grid" and name in GRID_KEYS:
        cfg.grids[name] = parse_values(value, where)
    elif section == "fock" and name == "cutoff":
        try:
            cfg.cutoff = int(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: cutoff must be an integer") from exc
    elif section == "channel" and name == "eta_det":
        vals = parse_values(value, where)
        if len(vals) != 1:
            raise ConfigError(f"{where}: eta_det takes a single value")
        cfg.eta_det = vals[0]
    elif section == "solver" and name in SOLVER_KEYS:
        try:
            cfg.solver[name] = SOLVER_KEYS[name](value.strip())
        except ValueError as exc:
            raise ConfigError(f"{where}: cannot parse {value!r}") from exc
    elif section == "run" and name == "jobs":
        try:
            cfg.jobs = int(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: jobs must be an integer") from exc
    elif section == "run" and name == "out":
        cfg.out = value.strip() or None
    else:
        raise ConfigError(f"{where}: unknown key {key!r}")


def load_config(path: str | None = None, text: str | None = None,
                overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig` from a file or text plus overrides.

    ``overrides`` maps dotted keys to raw values and wins over the file.
    """
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    source = path or "<config>"
    if text is not None:
        for key, (lineno, value) in parse_config_text(text, source).items():
            _apply(cfg, key, value, f"{source}:{lineno}: {key}")
    for key, value in (overrides or {}).items():
        _apply(cfg, key, value, f"--{key}")
    return cfg.validate()


def grid_points(cfg: RunConfig) -> list[dict]:
    """Cartesian product of the grids in a deterministic order."""
    keys = GRID_KEYS
    out = []
    for combo in itertools.product(*(cfg.grids[k] for k in keys)):
        point = dict(zip(keys, combo))
        point["protocol"] = cfg.protocol
        point["Nc"] = cfg.cutoff
        point["eta_det"] = cfg.eta_det
        out.append(point)
    return out


def _sort_key(row: dict) -> tuple:
    return tuple(row[k] for k in ("protocol", "L", "xi", "alpha", "delta_c", "delta_a", "delta_p", "beta", "Nc"))


def _spec_for(point: dict) -> ProtocolSpec:
    return ProtocolSpec(point["protocol"], point["alpha"], delta_c=point["delta_c"],
                        delta_a=point["delta_a"], delta_p=point["delta_p"], beta=point["beta"])


def _evaluate_point(args: tuple[dict, dict]) -> dict:
    point, solver = args
    row = {k: point[k] for k in ("protocol", "L", "xi", "alpha", "delta_c", "delta_a", "delta_p", "beta", "Nc")}
    start = time.perf_counter()
    try:
        ch = ChannelModel.from_distance(point["L"], point["xi"], point["eta_det"])
        row["eta"] = ch.eta
        rep = key_rate(_spec_for(point), ch, point["Nc"], SolverOptions(**solver))
        row.update(step1_value=rep.step1_value, lower_bound=rep.lower_bound, p_pass=rep.p_pass,
                   delta_ec=rep.delta_ec, key_rate=rep.key_rate, fw_iters=rep.iterations,
                   max_residual=rep.max_residual, status=rep.status)
    except Exception as exc:  # recorded in-row, never aborts a sweep
        row.setdefault("eta", float("nan"))
        row.update(step1_value=float("nan"), lower_bound=float("nan"), p_pass=float("nan"),
                   delta_ec=float("nan"), key_rate=0.0, fw_iters=0, max_residual=float("nan"),
                   status=f"error: {type(exc).__name__}: {exc}")
    row["wall_time_s"] = time.perf_counter() - start
    return row


def row_failed(row: dict) -> bool:
    status = str(row.get("status", ""))
    return status.startswith(("error", "no_certificate", "fw_failed"))


def _map(func, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(func, items))


def run_keyrate(cfg: RunConfig, single: bool = False) -> list[dict]:
    """Evaluate every grid point; rows are sorted deterministically.

    With ``single=True`` every grid must hold exactly one value.
    """
    points = grid_points(cfg)
    if single and len(points) != 1:
        multi = [k for k in GRID_KEYS if len(cfg.grids[k]) > 1]
        raise ConfigError(f"keyrate evaluates one point; grids {multi} hold several values (use sweep)")
    rows = _map(_evaluate_point, [(p, dict(cfg.solver)) for p in points], cfg.jobs)
    return sorted(rows, key=_sort_key)


def run_oracle(cfg: RunConfig) -> list[dict]:
    """Analytical pure-loss rows; requires zero excess noise and no postselection."""
    if any(v != 0 for v in cfg.grids["xi"]):
        raise ConfigError("oracle: the analytical rate needs grid.xi = 0")
    for key in ("delta_c", "delta_a", "delta_p"):
        if any(v != 0 for v in cfg.grids[key]):
            raise ConfigError(f"oracle: the analytical rate needs grid.{key} = 0")
    rows = []
    for point in grid_points(cfg):
        spec = _spec_for(point)
        eta = ChannelModel.from_distance(point["L"], 0.0, point["eta_det"]).eta
        info = mutual_information_lossonly(spec, eta)
        rows.append({
            "protocol": point["protocol"], "L": point["L"], "alpha": point["alpha"],
            "beta": point["beta"], "I_XZ": info, "holevo": holevo_lossonly(spec, eta),
            "dw_rate": dw_rate_lossonly(spec, eta, point["beta"]),
            "plob": plob_bound(eta) if eta < 1 else float("inf"),
        })
    return sorted(rows, key=lambda r: (r["protocol"], r["L"], r["alpha"], r["beta"]))


def operator_matrix(name: str, cutoff: int, delta_c: float = 0.0, delta_a: float = 0.0,
                    delta_p: float = 0.0) -> np.ndarray:
    """Matrix of a named operator: a, q, p, n, d, I0, I1, R0..R3, or sqrt_<name>."""
    dim = FockDim(cutoff)
    if name.startswith("sqrt_"):
        return psd_sqrt(operator_matrix(name[5:], cutoff, delta_c, delta_a, delta_p)).matrix
    if name == "a":
        return annihilation_matrix(dim).matrix
    obs = build_observables(dim)
    if name in obs:
        return obs[name].matrix
    if name in ("I0", "I1"):
        return interval_operators(delta_c, dim)[int(name[1])].matrix
    if name in ("R0", "R1", "R2", "R3"):
        return region_operators(delta_a, delta_p, dim)[int(name[1])].matrix
    raise ConfigError(f"unknown operator {name!r}")


def run_dump_operators(names: Iterable[str], cfg: RunConfig, dense: bool = False) -> list[dict]:
    """Rows ``(name, row, col, re, im)`` in row-major order for every requested operator.

    Off-diagonal entries that are exactly zero are omitted unless ``dense``
    is set; the diagonal is always written.
    """
    dc = cfg.grids["delta_c"][0]
    da = cfg.grids["delta_a"][0]
    dp = cfg.grids["delta_p"][0]
    rows = []
    for name in names:
        mat = operator_matrix(name, cfg.cutoff, dc, da, dp)
        for (i, j), v in np.ndenumerate(mat):
            if v == 0 and i != j and not dense:
                continue
            rows.append({"name": name, "row": i, "col": j, "re": float(v.real), "im": float(v.imag)})
    return rows


def _fmt(value, exact: bool = False) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value)) if exact else f"{float(value):.10g}"
    return str(value)


def format_csv(rows: Sequence[dict], columns: Sequence[str], exact: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c], exact) for c in columns])
    return buf.getvalue()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmcv-keyrate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (section.key = value lines)")
        p.add_argument("--out", help="output CSV path (default: stdout)")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--protocol", choices=(HOMODYNE, HETERODYNE))
        for key in GRID_KEYS:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUES",
                           help=f"grid.{key}: number, list a,b,c or range start:stop:step")
        p.add_argument("--cutoff", type=str, help="fock.cutoff (photon-number cutoff N_c)")
        p.add_argument("--eta-det", dest="eta_det", help="channel.eta_det")
        p.add_argument("--max-iters", dest="max_iters", help="solver.max_iters")
        p.add_argument("--gap-tol", dest="gap_tol", help="solver.gap_tol")
        p.add_argument("--backend", choices=BACKENDS, help="solver.backend")

    for name, text in (("keyrate", "evaluate one configuration"),
                       ("sweep", "evaluate the Cartesian product of all grids"),
                       ("oracle", "analytical pure-loss table"),
                       ("dump-operators", "write operator matrices as CSV")):
        p = sub.add_parser(name, help=text)
        common(p)
        if name == "dump-operators":
            p.add_argument("--operator", action="append", dest="operators",
                           help="a, q, p, n, d, I0, I1, R0..R3 or sqrt_<name>; repeatable")
            p.add_argument("--dense", action="store_true", help="also write exactly-zero entries")
    return parser


def _overrides(ns: argparse.Namespace) -> dict[str, str]:
    out = {}
    if ns.protocol:
        out["protocol.detection"] = ns.protocol
    for key in GRID_KEYS:
        if getattr(ns, key) is not None:
            out[f"grid.{key}"] = getattr(ns, key)
    if ns.cutoff is not None:
        out["fock.cutoff"] = ns.cutoff
    if ns.eta_det is not None:
        out["channel.eta_det"] = ns.eta_det
    for key in ("max_iters", "gap_tol", "backend"):
        if getattr(ns, key) is not None:
            out[f"solver.{key}"] = str(getattr(ns, key))
    if ns.jobs is not None:
        out["run.jobs"] = str(ns.jobs)
    if ns.out is not None:
        out["run.out"] = ns.out
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    try:
        cfg = load_config(ns.config, overrides=_overrides(ns))
        if ns.command in ("keyrate", "sweep"):
            rows = run_keyrate(cfg, single=ns.command == "keyrate")
            text, failed = format_csv(rows, KEYRATE_COLUMNS), any(row_failed(r) for r in rows)
        elif ns.command == "oracle":
            text, failed = format_csv(run_oracle(cfg), ORACLE_COLUMNS), False
        else:
            names = ns.operators or ["n"]
            rows = run_dump_operators(names, cfg, dense=ns.dense)
            text, failed = format_csv(rows, DUMP_COLUMNS, exact=True), False
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_FAILED if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
