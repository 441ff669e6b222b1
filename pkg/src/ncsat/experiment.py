"""Experiment configuration and orchestration.

Configuration is a YAML document with top-level keys ``schemes``,
``esn0_grid`` (both required), ``output_dir`` and the optional sections
``channel``, ``sim``, ``policy`` and ``phy``; see ``docs/config.md``.
Unknown keys and type mismatches are rejected with the offending key and
line number.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .channel import (OPEN_AREA_GEO, ChannelTrace, LmsParameters, ShadowState, load_trace,
                      save_trace)
from .markov import StateSpace, build_matrix, dump_matrix, expected_delay
from .phy import Modulation, PhyConfig
from .policies import CSI_MODES, SCHEMES, PolicyConfig
from .simulator import (ACK_MODES, ConstantSource, LmsSource, LoadedSource, SimConfig,
                        SweepPoint, run_sweep)

__all__ = [
    "ConfigError",
    "ChannelConfig",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "run_experiment",
    "analyze_delay",
    "dump_transition_matrix",
    "SWEEP_HEADER",
    "DELAY_HEADER",
]

SWEEP_HEADER = ("scheme", "esn0_db", "avg_packets", "se_packets", "avg_delay_s", "se_delay_s",
                "throughput_bps", "se_throughput", "energy_mw_s", "se_energy", "delivery_rate",
                "silent_frac", "n_runs", "seed")
DELAY_HEADER = ("scheme", "esn0_db", "expected_delay_s", "truncated")
CHANNEL_KINDS = ("constant", "lms", "trace")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "constant"
    slot_duration: float = 0.2388
    trace_path: str | None = None
    lms: LmsParameters = OPEN_AREA_GEO

    def source(self):
        if self.kind == "constant":
            return ConstantSource(self.slot_duration)
        if self.kind == "lms":
            return LmsSource(replace(self.lms, slot_duration=self.slot_duration))
        return LoadedSource(self.load())

    def load(self) -> ChannelTrace:
        with open(self.trace_path, "rb") as fh:
            return load_trace(fh, self.slot_duration)


@dataclass(frozen=True)
class ExperimentConfig:
    schemes: tuple[str, ...]
    esn0_grid: tuple[float, ...]
    channel: ChannelConfig = ChannelConfig()
    sim: SimConfig = SimConfig()
    output_dir: Path = Path("out")

    def sim_for(self, scheme: str) -> SimConfig:
        return replace(self.sim, policy=scheme)

    def to_dict(self) -> dict[str, Any]:
        """Fully resolved configuration in the input schema."""
        sim = self.sim
        lms = self.channel.lms
        return {
            "schemes": list(self.schemes),
            "esn0_grid": [float(x) for x in self.esn0_grid],
            "output_dir": str(self.output_dir),
            "channel": {
                "kind": self.channel.kind,
                "slot_duration": self.channel.slot_duration,
                "trace_path": self.channel.trace_path,
                "lms": {
                    "states": [[s.loo_alpha_db, s.loo_psi_db, s.loo_mp_db] for s in lms.states],
                    "state_transition": lms.state_transition.tolist(),
                    "mobile_speed": lms.mobile_speed,
                    "initial_state": lms.initial_state,
                },
            },
            "sim": {
                "dof_target": sim.dof_target,
                "t_w": sim.t_w,
                "t_p": sim.t_p,
                "horizon": sim.horizon,
                "ack_mode": sim.ack_mode,
                "n_runs": sim.n_runs,
                "seed": sim.seed,
                "use_real_codec": sim.use_real_codec,
                "workers": sim.workers,
            },
            "policy": asdict(sim.policy_config),
            "phy": {k: v for k, v in asdict(sim.phy).items() if k != "qos_pb_threshold"},
        }


# --------------------------------------------------------------------------
# schema

def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _as_float(v):
    if isinstance(v, bool):
        raise TypeError
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        # YAML 1.1 reads exponent forms such as 1e-5 as strings.
        return float(v)
    raise TypeError


def _as_int(v):
    if not _is_int(v):
        raise TypeError
    return v


def _as_bool(v):
    if not isinstance(v, bool):
        raise TypeError
    return v


def _as_str(v):
    if not isinstance(v, str):
        raise TypeError
    return v


def _opt(conv):
    def inner(v):
        return None if v is None else conv(v)
    inner.__name__ = f"optional {conv.__name__}"
    return inner


_TYPE_NAMES = {_as_float: "number", _as_int: "integer", _as_bool: "boolean", _as_str: "string"}

_SECTIONS: dict[str, dict[str, Any]] = {
    "sim": {"dof_target": _as_int, "t_w": _as_float, "t_p": _opt(_as_float), "horizon": _as_int,
            "ack_mode": _as_str, "n_runs": _as_int, "seed": _as_int, "use_real_codec": _as_bool,
            "workers": _as_int},
    "policy": {"batch_cap": _as_int, "max_trials": _as_int, "qos_pb_threshold": _as_float,
               "csi_mode": _as_str},
    "phy": {"packet_bits": _as_int, "n0_dbm": _as_float, "symbol_rate": _as_float},
    "channel": {"kind": _as_str, "slot_duration": _as_float, "trace_path": _opt(_as_str),
                "lms": dict},
}
_LMS_KEYS = ("states", "state_transition", "mobile_speed", "initial_state")
_TOP_KEYS = ("schemes", "esn0_grid", "output_dir", *_SECTIONS)


def _line_map(node, path=(), out=None) -> dict[tuple[str, ...], int]:
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            sub = path + (str(key_node.value),)
            out[sub] = key_node.start_mark.line + 1
            _line_map(value_node, sub, out)
    return out


class _Reader:
    def __init__(self, lines: dict[tuple[str, ...], int]):
        self.lines = lines

    def line(self, path: tuple[str, ...]) -> int | None:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None

    def fail(self, path: tuple[str, ...], message: str):
        raise ConfigError(message, ".".join(path) if path else None, self.line(path) or 1)

    def mapping(self, value, path) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        return value

    def reject_unknown(self, data: dict, allowed, path):
        for key in data:
            if key not in allowed:
                self.fail(path + (str(key),), "unknown key")

    def convert(self, conv, value, path):
        try:
            return conv(value)
        except (TypeError, ValueError):
            name = _TYPE_NAMES.get(conv, conv.__name__.replace("_as_", ""))
            self.fail(path, f"expected {name}, got {type(value).__name__} {value!r}")


def _parse_grid(value, r: _Reader) -> tuple[float, ...]:
    path = ("esn0_grid",)
    if isinstance(value, str):
        items = [v.strip() for v in value.split(",") if v.strip()]
    elif isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [value]
    grid = tuple(r.convert(_as_float, v, path) for v in items)
    if not grid:
        r.fail(path, "grid must not be empty")
    if not all(math.isfinite(g) for g in grid):
        r.fail(path, "grid values must be finite")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        r.fail(path, "grid must be strictly increasing")
    return grid


def _parse_lms(data: dict, r: _Reader) -> LmsParameters:
    base = OPEN_AREA_GEO
    path = ("channel", "lms")
    r.reject_unknown(data, _LMS_KEYS, path)
    states = base.states
    if "states" in data:
        raw = data["states"]
        if not isinstance(raw, list) or not raw:
            r.fail(path + ("states",), "expected a non-empty list of [alpha_db, psi_db, mp_db]")
        states = []
        for row in raw:
            if not isinstance(row, list) or len(row) != 3:
                r.fail(path + ("states",), "each state needs [alpha_db, psi_db, mp_db]")
            states.append(ShadowState(*(r.convert(_as_float, v, path + ("states",)) for v in row)))
    transition = base.state_transition
    if "state_transition" in data:
        raw = data["state_transition"]
        try:
            transition = np.array([[_as_float(v) for v in row] for row in raw], dtype=float)
        except (TypeError, ValueError):
            r.fail(path + ("state_transition",), "expected a matrix of numbers")
    speed = r.convert(_as_float, data.get("mobile_speed", base.mobile_speed), path + ("mobile_speed",))
    start = r.convert(_as_int, data.get("initial_state", base.initial_state), path + ("initial_state",))
    try:
        return LmsParameters(tuple(states), transition, base.slot_duration, speed,
                             base.mean_esn0_db, start)
    except ValueError as exc:
        r.fail(path, str(exc))


def parse_config(source: str | bytes, base_dir: str | os.PathLike | None = None) -> ExperimentConfig:
    """Validate a YAML experiment document and apply defaults."""
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", line=mark.line + 1 if mark else None) from None
    r = _Reader(_line_map(root) if root is not None else {})
    data = r.mapping(data, ())
    r.reject_unknown(data, _TOP_KEYS, ())
    for key in ("schemes", "esn0_grid"):
        if key not in data:
            raise ConfigError("missing required key", key, 1)

    raw_schemes = data["schemes"]
    if isinstance(raw_schemes, str):
        raw_schemes = [s.strip() for s in raw_schemes.split(",") if s.strip()]
    if not isinstance(raw_schemes, list) or not raw_schemes:
        r.fail(("schemes",), "expected a non-empty list of schemes")
    schemes = []
    for s in raw_schemes:
        name = r.convert(_as_str, s, ("schemes",)).lower()
        if name not in SCHEMES:
            r.fail(("schemes",), f"unknown scheme {name!r}; expected one of {', '.join(SCHEMES)}")
        if name in schemes:
            r.fail(("schemes",), f"duplicate scheme {name!r}")
        schemes.append(name)
    grid = _parse_grid(data["esn0_grid"], r)

    sections = {}
    for name, schema in _SECTIONS.items():
        sec = r.mapping(data.get(name), (name,))
        r.reject_unknown(sec, schema, (name,))
        values = {}
        for key, value in sec.items():
            if name == "channel" and key == "lms":
                values[key] = _parse_lms(r.mapping(value, (name, key)), r)
            else:
                values[key] = r.convert(schema[key], value, (name, key))
        sections[name] = values

    ch = sections["channel"]
    kind = ch.get("kind", "constant")
    if kind not in CHANNEL_KINDS:
        r.fail(("channel", "kind"), f"expected one of {', '.join(CHANNEL_KINDS)}")
    trace_path = ch.get("trace_path")
    if kind == "trace":
        if trace_path is None:
            raise ConfigError("required when channel.kind is 'trace'", "channel.trace_path",
                              r.line(("channel",)) or 1)
        if base_dir is not None and not os.path.isabs(trace_path):
            trace_path = os.path.join(base_dir, trace_path)
    pol = sections["policy"]
    if "csi_mode" in pol and pol["csi_mode"] not in CSI_MODES:
        r.fail(("policy", "csi_mode"), f"expected one of {', '.join(CSI_MODES)}")
    if "ack_mode" in sections["sim"] and sections["sim"]["ack_mode"] not in ACK_MODES:
        r.fail(("sim", "ack_mode"), f"expected one of {', '.join(ACK_MODES)}")

    try:
        channel = ChannelConfig(kind, ch.get("slot_duration", 0.2388), trace_path,
                                ch.get("lms", OPEN_AREA_GEO))
        if not channel.slot_duration > 0:
            r.fail(("channel", "slot_duration"), "must be positive")
        policy_cfg = PolicyConfig(**pol)
        phy = PhyConfig(qos_pb_threshold=policy_cfg.qos_pb_threshold, **sections["phy"])
        sim = SimConfig(policy=schemes[0], policy_config=policy_cfg, phy=phy, **sections["sim"])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), line=1) from None
    output_dir = Path(r.convert(_as_str, data.get("output_dir", "out"), ("output_dir",)))
    return ExperimentConfig(tuple(schemes), grid, channel, sim, output_dir)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


# --------------------------------------------------------------------------
# outputs

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def sweep_rows(scheme: str, points: list[SweepPoint]):
    for p in points:
        yield (scheme, p.esn0_db, p.avg_packets, p.se_packets, p.avg_delay, p.se_delay,
               p.avg_throughput, p.se_throughput, p.avg_energy, p.se_energy, p.delivery_rate,
               p.silent_frac, p.n_runs, p.seed)


def write_manifest(cfg: ExperimentConfig, path: Path) -> None:
    header = (f"# ncsat {__version__}\n"
              "# Resolved configuration; pass this file back with --config to reproduce.\n")
    body = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(header + body)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def run_experiment(cfg: ExperimentConfig) -> dict[str, Path]:
    """Monte-Carlo sweep of every scheme over the grid; writes sweep.csv and manifest.txt."""
    source = cfg.channel.source()
    rows = []
    for scheme in cfg.schemes:
        points = run_sweep(cfg.sim_for(scheme), cfg.esn0_grid, source)
        rows.extend(sweep_rows(scheme, points))
    out = Path(cfg.output_dir)
    sweep_path, manifest_path = out / "sweep.csv", out / "manifest.txt"
    _write_csv(sweep_path, SWEEP_HEADER, rows)
    write_manifest(cfg, manifest_path)
    return {"sweep": sweep_path, "manifest": manifest_path}


def _analytic_trace(cfg: ExperimentConfig, esn0_db: float) -> ChannelTrace:
    if cfg.channel.kind == "lms":
        raise ConfigError("analytic delay needs a constant or loaded trace, not 'lms'", "channel.kind")
    n_slots = cfg.sim.horizon + max(cfg.sim_for(s).make_policy().lookahead(cfg.sim.dof_target)
                                    for s in cfg.schemes)
    return cfg.channel.source().make(esn0_db, n_slots)


def analyze_delay(cfg: ExperimentConfig) -> Path:
    """Expected delivery delay from the Markov model; writes delay_analytic.csv."""
    space = StateSpace(cfg.sim.dof_target, cfg.sim.horizon)
    rows = []
    for scheme in cfg.schemes:
        sim = cfg.sim_for(scheme)
        for esn0 in cfg.esn0_grid:
            trace = _analytic_trace(cfg, esn0)
            table = expected_delay(trace, sim.phy, sim.make_policy(), space, sim.t_w, sim.t_p,
                                   sim.ack_slots(trace.slot_duration))
            rows.append((scheme, float(esn0), table.start_delay, table.truncated))
    path = Path(cfg.output_dir) / "delay_analytic.csv"
    _write_csv(path, DELAY_HEADER, rows)
    return path


def dump_transition_matrix(cfg: ExperimentConfig, esn0_db: float, mod: Modulation) -> Path:
    space = StateSpace(cfg.sim.dof_target, cfg.sim.horizon)
    trace = _analytic_trace(cfg, esn0_db)
    path = Path(cfg.output_dir) / "matrix.csv"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_matrix(build_matrix(trace, cfg.sim.phy, mod, space)), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_trace(trace: ChannelTrace, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            save_trace(trace, fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path
