"""Flat ``section.key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Every key is optional; omitted
keys take the defaults of :class:`SimConfig` and :class:`MdpSpec`. A bare
key (``seed``) is accepted when it names exactly one known key.
"""
from __future__ import annotations

import math
from dataclasses import asdict, fields, replace

from .mdp import MdpSpec
from .sim import SimConfig
from .topology import TopologyParams


class ConfigError(ValueError):
    """Malformed or invalid configuration; the message lists every problem."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _floats(text: str):
    parts = [_float(p) for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected one or more numbers")
    return parts[0] if len(parts) == 1 else tuple(parts)


def _optional_float(text: str):
    return None if text.strip().lower() in ("none", "") else _float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _seed(text: str) -> int:
    return int(text, 0)


# key -> (target, field, parser); target "topology" | "sim" | "oracle"
SIM_KEYS = {
    "topology.num_pairs": ("topology", "num_pairs", _int),
    "topology.cell_radius": ("topology", "cell_radius", _float),
    "topology.d2d_range": ("topology", "d2d_range", _float),
    "topology.sensing_distance": ("topology", "sensing_distance", _float),
    "traffic.mean_arrival_rate": ("sim", "mean_arrival_rate", _float),
    "traffic.arrival_spread": ("sim", "arrival_spread", _float),
    "traffic.packet_size_bits": ("sim", "packet_size_bits", _int),
    "link.bandwidth": ("sim", "bandwidth", _float),
    "link.slot_duration": ("sim", "slot_duration", _float),
    "link.noise_density_dbm_hz": ("sim", "noise_density_dbm_hz", _float),
    "link.sinr_gap": ("sim", "sinr_gap", _float),
    "link.p_max_dbm": ("sim", "p_max_dbm", _float),
    "cost.beta": ("sim", "beta", _floats),
    "cost.gamma": ("sim", "gamma", _floats),
    "sim.horizon": ("sim", "horizon", _int),
    "sim.num_topologies": ("sim", "num_topologies", _int),
    "sim.seed": ("sim", "seed", _seed),
    "sim.warmup_fraction": ("sim", "warmup_fraction", _float),
    "priority.q_clamp": ("sim", "q_clamp", _float),
    "priority.table_slots": ("sim", "table_slots", _float),
    "priority.coupling": ("sim", "coupling", _bool),
    "controller.max_iters": ("sim", "max_iters", _int),
    "controller.eps_rel": ("sim", "eps_rel", _float),
    "controller.cap_factor": ("sim", "cap_factor", _float),
    "controller.w_csi": ("sim", "w_csi", _optional_float),
    "controller.queue_weight_scale": ("sim", "queue_weight_scale", _float),
}

ORACLE_KEYS = {
    "oracle.noise": ("oracle", "noise", _float),
    "oracle.gain": ("oracle", "gain", _float),
    "oracle.sinr_gap": ("oracle", "sinr_gap", _float),
    "oracle.bandwidth": ("oracle", "bandwidth", _float),
    "oracle.slot_duration": ("oracle", "slot_duration", _float),
    "oracle.packet_bits": ("oracle", "packet_bits", _float),
    "oracle.queue_packets": ("oracle", "queue_packets", _int),
    "oracle.arrival_rate": ("oracle", "arrival_rate", _float),
    "oracle.arrival_max_packets": ("oracle", "arrival_max_packets", _int),
    "oracle.channel_levels": ("oracle", "channel_levels", _int),
    "oracle.p_max": ("oracle", "p_max", _float),
    "oracle.power_levels": ("oracle", "power_levels", _int),
    "oracle.beta": ("oracle", "beta", _float),
    "oracle.gamma": ("oracle", "gamma", _float),
    "oracle.snap": ("oracle", "snap", str),
    "oracle.tol": ("oracle", "tol", _float),
    "oracle.max_sweeps": ("oracle", "max_sweeps", _int),
}

SWEEP_KEYS = {
    "sweep.axis": ("sweep", "axis", str),
    "sweep.values": ("sweep", "values", lambda t: tuple(_float(p) for p in t.split(",") if p.strip())),
}

ALL_KEYS = {**SIM_KEYS, **ORACLE_KEYS, **SWEEP_KEYS}


def _resolve(key: str):
    if key in ALL_KEYS:
        return key
    matches = [k for k in ALL_KEYS if k.split(".", 1)[1] == key]
    return matches[0] if len(matches) == 1 else None


def read_pairs(text: str, source: str = "<config>"):
    """Parse ``key = value`` lines into an ordered list of (key, value, where)."""
    pairs, problems = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        pairs.append((key, value, f"{source}:{lineno}"))
    return pairs, problems


def parse_overrides(items):
    pairs, problems = [], []
    for i, item in enumerate(items or ()):
        if "=" not in item:
            problems.append(f"--set #{i + 1}: expected key=value, got {item!r}")
            continue
        key, value = (s.strip() for s in item.split("=", 1))
        pairs.append((key, value, f"--set {key}"))
    return pairs, problems


def load_settings(path=None, overrides=()) -> dict:
    """Resolved ``{full_key: parsed value}`` from a file plus overrides, later wins."""
    pairs, problems = [], []
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        p, e = read_pairs(text, str(path))
        pairs += p
        problems += e
    p, e = parse_overrides(overrides)
    pairs += p
    problems += e
    settings = {}
    for key, value, where in pairs:
        full = _resolve(key)
        if full is None:
            near = [k for k in ALL_KEYS if k.split(".", 1)[1] == key]
            what = f"ambiguous key {key!r} (one of {', '.join(near)})" if near else f"unknown key {key!r}"
            problems.append(f"{where}: {what}")
            continue
        parser = ALL_KEYS[full][2]
        try:
            settings[full] = parser(value)
        except ValueError as exc:
            problems.append(f"{where}: {full}: {exc}")
    if problems:
        raise ConfigError(problems)
    return settings


def build_sim_config(settings: dict, base: SimConfig | None = None) -> SimConfig:
    base = base or SimConfig()
    topo_kw = {f: v for k, v in settings.items() if k in SIM_KEYS
               for t, f, _ in [SIM_KEYS[k]] if t == "topology"}
    sim_kw = {f: v for k, v in settings.items() if k in SIM_KEYS
              for t, f, _ in [SIM_KEYS[k]] if t == "sim"}
    problems = []
    topo = base.topology
    try:
        topo = replace(base.topology, **topo_kw)
    except ValueError as exc:
        problems += [f"topology: {m}" for m in str(exc).split("; ")]
    candidate = {**{f.name: getattr(base, f.name) for f in fields(SimConfig)}, **sim_kw}
    candidate["topology"] = topo
    try:
        cfg = SimConfig(**candidate)
    except ValueError as exc:
        problems += str(exc).split("; ")
        cfg = None
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(path=None, overrides=()) -> SimConfig:
    """SimConfig from a config file and ``key=value`` overrides."""
    return build_sim_config(load_settings(path, overrides))


def build_oracle(settings: dict):
    """(MdpSpec, tol, max_sweeps) from ``oracle.*`` settings."""
    kw = {ALL_KEYS[k][1]: v for k, v in settings.items() if k in ORACLE_KEYS}
    tol = kw.pop("tol", 1e-9)
    max_sweeps = kw.pop("max_sweeps", 100_000)
    for name in ("arrival_rate", "beta", "gamma"):
        if name in kw:
            kw[name] = (kw[name],)
    if "gain" in kw:
        kw["gain"] = ((kw["gain"],),)
    try:
        spec = MdpSpec(**kw)
    except ValueError as exc:
        raise ConfigError([f"oracle: {m}" for m in str(exc).split("; ")]) from exc
    problems = []
    if tol <= 0:
        problems.append("oracle.tol must be > 0")
    if max_sweeps < 1:
        problems.append("oracle.max_sweeps must be >= 1")
    if problems:
        raise ConfigError(problems)
    return spec, tol, max_sweeps


def config_to_dict(cfg: SimConfig) -> dict:
    """Resolved configuration keyed like the config file."""
    out = {}
    for key, (target, name, _) in SIM_KEYS.items():
        obj = cfg.topology if target == "topology" else cfg
        value = getattr(obj, name)
        out[key] = list(value) if isinstance(value, tuple) else value
    out["derived.noise_watts"] = cfg.noise
    out["derived.p_max_watts"] = cfg.p_max
    out["derived.path_loss"] = asdict(cfg.topology.path_loss)
    return out


def oracle_to_dict(spec: MdpSpec, tol: float, max_sweeps: int) -> dict:
    d = asdict(spec)
    d["tol"] = tol
    d["max_sweeps"] = max_sweeps
    return d


__all__ = ["ConfigError", "parse_config", "load_settings", "build_sim_config", "build_oracle",
           "config_to_dict", "oracle_to_dict", "TopologyParams"]
