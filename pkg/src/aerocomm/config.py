"""Configuration loading and validation.

Configs are JSON. Missing environment fields fall back to the published
simulation defaults; unknown keys are rejected and every violation names the
offending field path. An explicit seed is required to run a simulation (there
is no wall-clock seeding).
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .emission import (BimodalSpeedSource, CdfDiameterSource, CdfSpeedSource,
                       EmissionProfile, EmpiricalCdf, EventProcessState,
                       LogNormalSource, RespiratoryEventKind, SpeakingMarkov,
                       empirical_cdf_from_distances)
from .errors import ConfigError
from .scenario import Agent, Aperture, ApertureKind
from .transport import Environment, JetField

_UNITS = {"um": 1e-6, "m": 1.0, "m_per_s": 1.0}

_EVENT_KINDS = {
    "breath": RespiratoryEventKind.BREATH,
    "speech": RespiratoryEventKind.SPEECH_FRAME,
    "cough": RespiratoryEventKind.COUGH,
    "sneeze": RespiratoryEventKind.SNEEZE,
}


def load_empirical_csv(path, unit):
    """Read a weighted sample from a `value,count` CSV, converted to SI.

    Returns (values, counts) arrays; counts are non-negative integers and the
    total weight must be positive.
    """
    if unit not in _UNITS:
        raise ConfigError(str(path), f"unknown unit {unit!r}")
    scale = _UNITS[unit]
    values, counts = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["value", "count"]:
            raise ConfigError(str(path), "expected header 'value,count'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ConfigError(str(path), f"line {lineno}: expected 2 fields")
            try:
                v = float(row[0])
                c = int(row[1])
            except ValueError:
                raise ConfigError(str(path), f"line {lineno}: malformed row {row!r}")
            if c < 0:
                raise ConfigError(str(path), f"line {lineno}: negative count {c}")
            if not math.isfinite(v):
                raise ConfigError(str(path), f"line {lineno}: non-finite value")
            values.append(v * scale)
            counts.append(c)
    if sum(counts) <= 0:
        raise ConfigError(str(path), "zero total weight")
    return np.array(values), np.array(counts)


@dataclass
class RunSettings:
    duration: float = 30.0
    dt_global: float = 0.01
    seed: int = None
    tol: float = 1e-5
    dt_max: float = 0.01
    dt_min: float = 1e-7
    output_dir: str = None


@dataclass
class AnalysisSettings:
    heatmap_cell: float = 0.1
    heatmap_origin: tuple = (-1.5, 0.0)
    heatmap_extent: tuple = (3.0, 6.0)
    radial_bands: tuple = (0.5, 2.0, 5.0)


@dataclass
class Config:
    environment: Environment
    emission_profile: EmissionProfile
    agents: list
    run: RunSettings
    analysis: AnalysisSettings
    symbol_level_thresholds: tuple = (100, 1000)
    raw: dict = field(default_factory=dict, repr=False)


class _Block:
    """One JSON object, with typed access and unknown-key rejection."""

    def __init__(self, data, path):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected an object")
        self.data = data
        self.path = path
        self.seen = set()

    def child(self, key, default=None):
        self.seen.add(key)
        sub = self.data.get(key, {} if default is None else default)
        return _Block(sub, f"{self.path}.{key}" if self.path else key)

    def get(self, key, default, kind=None, positive=False, nonnegative=False,
            prob=False):
        self.seen.add(key)
        v = self.data.get(key, default)
        path = f"{self.path}.{key}" if self.path else key
        if v is None:
            return None
        if kind is bool:
            if not isinstance(v, bool):
                raise ConfigError(path, f"expected boolean, got {v!r}")
            return v
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(path, f"expected integer, got {v!r}")
        elif kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(path, f"expected number, got {v!r}")
            v = float(v)
            if not math.isfinite(v):
                raise ConfigError(path, "must be finite")
        elif kind is str and not isinstance(v, str):
            raise ConfigError(path, f"expected string, got {v!r}")
        elif kind is list and not isinstance(v, list):
            raise ConfigError(path, f"expected list, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(path, f"must be > 0, got {v!r}")
        if nonnegative and v < 0:
            raise ConfigError(path, f"must be >= 0, got {v!r}")
        if prob and not 0.0 <= v <= 1.0:
            raise ConfigError(path, f"must be in [0, 1], got {v!r}")
        return v

    def reject_unknown(self):
        unknown = set(self.data) - self.seen
        if unknown:
            key = sorted(unknown)[0]
            path = f"{self.path}.{key}" if self.path else key
            raise ConfigError(path, "unknown key")


def _parse_environment(block):
    env = Environment(
        air_density=block.get("air_density", 1.2041, float, positive=True),
        air_viscosity=block.get("air_viscosity", 18.13e-6, float, positive=True),
        gravity=block.get("gravity", 9.81, float, positive=True),
        t_min_c=block.get("t_min_c", 20.0, float),
        t_max_c=block.get("t_max_c", 36.0, float),
        eddy_diffusivity_scale=block.get("eddy_diffusivity_scale", 0.1, float,
                                         nonnegative=True),
        mixing_length=block.get("mixing_length", 0.05, float, positive=True),
        evaporation_enabled=block.get("evaporation_enabled", False, bool),
        k_evap=block.get("k_evap", 1e-9, float, nonnegative=True),
        residue_fraction=block.get("residue_fraction", 0.3, float, prob=True),
    )
    block.reject_unknown()
    if env.t_max_c < env.t_min_c:
        raise ConfigError("environment.t_max_c", "must be >= t_min_c")
    return env


def _parse_jet(block):
    jet = JetField(
        mouth_diameter=block.get("mouth_diameter", 0.04, float, positive=True),
        half_angle_deg=block.get("half_angle_deg", 60.0, float, positive=True),
        decay_constant=block.get("decay_constant", 6.0, float, positive=True),
        buoyant_rise_rate=block.get("buoyant_rise_rate", 0.05, float,
                                    nonnegative=True),
    )
    block.reject_unknown()
    return jet


def _parse_inline_cdf(block, unit_default):
    unit = block.get("unit", unit_default, str)
    values = block.get("values", None, list)
    counts = block.get("counts", None, list)
    if values is None:
        raise ConfigError(f"{block.path}.values", "required for inline source")
    if counts is None:
        counts = [1] * len(values)
    if len(counts) != len(values):
        raise ConfigError(f"{block.path}.counts", "length must match values")
    if unit not in _UNITS:
        raise ConfigError(f"{block.path}.unit", f"unknown unit {unit!r}")
    scale = _UNITS[unit]
    return np.asarray(values, dtype=float) * scale, np.asarray(counts, dtype=float)


def _parse_diameter_source(block):
    kind = block.get("kind", "lognormal", str)
    if kind == "lognormal":
        src = LogNormalSource(
            mu=block.get("mu", math.log(25e-6), float),
            sigma=block.get("sigma", 0.5, float, positive=True))
    elif kind == "empirical":
        path = block.get("csv", None, str)
        if path is None:
            raise ConfigError(f"{block.path}.csv", "required for empirical source")
        unit = block.get("unit", "um", str)
        values, counts = load_empirical_csv(path, unit)
        src = CdfDiameterSource(EmpiricalCdf.from_weighted(values, counts))
    elif kind == "empirical_inline":
        values, counts = _parse_inline_cdf(block, "um")
        src = CdfDiameterSource(EmpiricalCdf.from_weighted(values, counts))
    else:
        raise ConfigError(f"{block.path}.kind", f"unknown diameter source {kind!r}")
    block.reject_unknown()
    return src


def _parse_speed_source(block, h0, gravity):
    kind = block.get("kind", "bimodal", str)
    if kind == "bimodal":
        src = BimodalSpeedSource(
            cloud_speed=block.get("cloud_speed", 8.0, float, nonnegative=True),
            droplet_speed=block.get("droplet_speed", 5.0, float, nonnegative=True),
            mode_fraction=block.get("mode_fraction", 0.5, float, prob=True),
            diameter_split=block.get("diameter_split", 100e-6, float,
                                     positive=True))
    elif kind in ("empirical_speeds", "empirical_distances"):
        path = block.get("csv", None, str)
        if path is not None:
            unit = block.get("unit", "m_per_s" if kind == "empirical_speeds"
                             else "m", str)
            values, counts = load_empirical_csv(path, unit)
        else:
            values, counts = _parse_inline_cdf(
                block, "m_per_s" if kind == "empirical_speeds" else "m")
        if kind == "empirical_distances":
            expanded = np.repeat(values, counts.astype(int))
            cdf = empirical_cdf_from_distances(expanded, h0, gravity)
        else:
            cdf = EmpiricalCdf.from_weighted(values, counts)
        src = CdfSpeedSource(cdf)
    else:
        raise ConfigError(f"{block.path}.kind", f"unknown speed source {kind!r}")
    block.reject_unknown()
    return src


def _parse_emission(block, gravity):
    height = block.get("height", 1.64, float, positive=True)
    counts_block = block.child("particles_per_event")
    counts = {}
    for name, kind in _EVENT_KINDS.items():
        default = {"breath": 50, "speech": 200, "cough": 5000,
                   "sneeze": 15000}[name]
        counts[kind] = counts_block.get(name, default, int, nonnegative=True)
    counts_block.reject_unknown()
    profile = EmissionProfile(
        diameter_source=_parse_diameter_source(block.child("diameter_source")),
        speed_source=_parse_speed_source(block.child("speed_source"),
                                         height, gravity),
        opening_angle_std_deg=block.get("opening_angle_std_deg", 6.25, float,
                                        positive=True),
        particles_per_event=counts,
        min_diameter_cutoff=block.get("min_diameter_cutoff", 0.0, float,
                                      nonnegative=True),
        jet_speed=block.get("jet_speed", 2.0, float, nonnegative=True),
        mass_density=block.get("mass_density", 997.0, float, positive=True),
    )
    block.seen.add("height")
    block.reject_unknown()
    return profile, height


def _parse_aperture(block):
    kind = block.get("kind", "face", str)
    try:
        ap_kind = ApertureKind(kind)
    except ValueError:
        raise ConfigError(f"{block.path}.kind", f"unknown aperture kind {kind!r}")
    ap = Aperture(
        kind=ap_kind,
        offset=block.get("offset", [0.0, 0.0, 0.0], list),
        radius=block.get("radius", 0.1, float, positive=True),
        gain=block.get("gain", 1.0 if ap_kind is ApertureKind.FACE else 0.3,
                       float, prob=True))
    block.reject_unknown()
    return ap


def _parse_events(block):
    markov = None
    if "markov" in block.data and block.data["markov"] is not None:
        mb = block.child("markov")
        markov = SpeakingMarkov(
            p_silence_to_talk=mb.get("p_silence_to_talk", 0.2, float, prob=True),
            p_talk_to_silence=mb.get("p_talk_to_silence", 0.1, float, prob=True),
            step=mb.get("step", 1.0, float, positive=True))
        mb.reject_unknown()
    else:
        block.seen.add("markov")
    state = EventProcessState(
        breath_rate_per_min=block.get("breath_rate_per_min", 0.0, float,
                                      nonnegative=True),
        markov=markov,
        p_cough=block.get("p_cough", 0.0, float, prob=True),
        p_sneeze=block.get("p_sneeze", 0.0, float, prob=True),
        event_step=block.get("event_step", 0.1, float, positive=True))
    scheduled = []
    for i, item in enumerate(block.get("scheduled", [], list)):
        ib = _Block(item, f"{block.path}.scheduled[{i}]")
        t_ev = ib.get("t", None, float, nonnegative=True)
        if t_ev is None:
            raise ConfigError(f"{ib.path}.t", "required")
        kind_name = ib.get("kind", None, str)
        if kind_name not in _EVENT_KINDS:
            raise ConfigError(f"{ib.path}.kind",
                              f"expected one of {sorted(_EVENT_KINDS)}")
        ib.reject_unknown()
        scheduled.append((t_ev, _EVENT_KINDS[kind_name]))
    block.reject_unknown()
    scheduled.sort(key=lambda e: e[0])
    return state if state.active else None, scheduled


def _parse_agent(data, index, default_height):
    block = _Block(data, f"agents[{index}]")
    agent_id = block.get("id", index, int, nonnegative=True)
    waypoints = block.get(
        "waypoints", [[0.0, [0.0, 0.0, default_height]]], list)
    parsed_wps = []
    for j, wp in enumerate(waypoints):
        if (not isinstance(wp, list) or len(wp) != 2
                or not isinstance(wp[1], list) or len(wp[1]) != 3):
            raise ConfigError(f"agents[{index}].waypoints[{j}]",
                              "expected [t, [x, y, z]]")
        parsed_wps.append((float(wp[0]), np.asarray(wp[1], dtype=float)))
    apertures = [
        _parse_aperture(_Block(ap, f"agents[{index}].apertures[{j}]"))
        for j, ap in enumerate(block.get("apertures", [], list))]
    mask_block = block.child("mask")
    mask_enabled = mask_block.get("enabled", False, bool)
    mask_eff = mask_block.get("efficiency", 0.8, float, prob=True)
    mask_att = mask_block.get("jet_attenuation", 0.9, float, prob=True)
    mask_block.reject_unknown()
    events, scheduled = _parse_events(block.child("events"))
    agent = Agent(
        id=agent_id,
        infected=block.get("infected", False, bool),
        waypoints=parsed_wps,
        facing=block.get("facing", [0.0, 1.0, 0.0], list),
        apertures=apertures,
        detection_threshold=block.get("detection_threshold", 100, int,
                                      positive=True),
        virion_concentration=block.get("virion_concentration", 1e12, float,
                                       nonnegative=True),
        mask_enabled=mask_enabled,
        mask_efficiency=mask_eff,
        mask_jet_attenuation=mask_att,
        events=events,
        scheduled=scheduled)
    block.reject_unknown()
    return agent


def _parse_run(block):
    run = RunSettings(
        duration=block.get("duration", 30.0, float, nonnegative=True),
        dt_global=block.get("dt_global", 0.01, float, positive=True),
        seed=block.get("seed", None, int, nonnegative=True),
        tol=block.get("tol", 1e-5, float, positive=True),
        dt_max=block.get("dt_max", 0.01, float, positive=True),
        dt_min=block.get("dt_min", 1e-7, float, positive=True),
        output_dir=block.get("output_dir", None, str))
    block.reject_unknown()
    return run


def _parse_analysis(block):
    origin = block.get("heatmap_origin", [-1.5, 0.0], list)
    extent = block.get("heatmap_extent", [3.0, 6.0], list)
    bands = block.get("radial_bands", [0.5, 2.0, 5.0], list)
    if len(origin) != 2 or len(extent) != 2:
        raise ConfigError(f"{block.path}.heatmap_origin",
                          "origin and extent must be 2-vectors")
    if any(b <= a for a, b in zip(bands, bands[1:])) or any(b <= 0 for b in bands):
        raise ConfigError(f"{block.path}.radial_bands",
                          "must be strictly increasing and positive")
    settings = AnalysisSettings(
        heatmap_cell=block.get("heatmap_cell", 0.1, float, positive=True),
        heatmap_origin=tuple(float(v) for v in origin),
        heatmap_extent=tuple(float(v) for v in extent),
        radial_bands=tuple(float(v) for v in bands))
    block.reject_unknown()
    return settings


def config_from_dict(data):
    """Build a validated Config from a parsed JSON object."""
    root = _Block(data, "")
    env = _parse_environment(root.child("environment"))
    jet = _parse_jet(root.child("jet"))
    profile, height = _parse_emission(root.child("emission"), env.gravity)
    profile.jet = jet
    agents_raw = root.get("agents", [], list)
    agents = [_parse_agent(a, i, height) for i, a in enumerate(agents_raw)]
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ConfigError("agents", "agent ids must be unique")
    run = _parse_run(root.child("run"))
    analysis = _parse_analysis(root.child("analysis"))
    sym_block = root.child("symbols")
    thresholds = sym_block.get("level_thresholds", [100, 1000], list)
    sym_block.reject_unknown()
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError("symbols.level_thresholds",
                          "must be strictly increasing")
    root.reject_unknown()
    return Config(environment=env, emission_profile=profile, agents=agents,
                  run=run, analysis=analysis,
                  symbol_level_thresholds=tuple(thresholds),
                  raw=data)


def load_config(path):
    """Load, default-fill, and validate a JSON config file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"JSON parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be an object")
    return config_from_dict(data)


def config_to_dict(config):
    """Serialize a Config back to a JSON-compatible dict.

    load -> serialize -> load is an identity on the validated view.
    """
    env = config.environment
    jet = config.emission_profile.jet or JetField()
    profile = config.emission_profile
    out = {
        "environment": {
            "air_density": env.air_density,
            "air_viscosity": env.air_viscosity,
            "gravity": env.gravity,
            "t_min_c": env.t_min_c,
            "t_max_c": env.t_max_c,
            "eddy_diffusivity_scale": env.eddy_diffusivity_scale,
            "mixing_length": env.mixing_length,
            "evaporation_enabled": env.evaporation_enabled,
            "k_evap": env.k_evap,
            "residue_fraction": env.residue_fraction,
        },
        "jet": {
            "mouth_diameter": jet.mouth_diameter,
            "half_angle_deg": jet.half_angle_deg,
            "decay_constant": jet.decay_constant,
            "buoyant_rise_rate": jet.buoyant_rise_rate,
        },
        "emission": _emission_to_dict(profile, config),
        "agents": [_agent_to_dict(a) for a in config.agents],
        "run": {k: v for k, v in {
            "duration": config.run.duration,
            "dt_global": config.run.dt_global,
            "seed": config.run.seed,
            "tol": config.run.tol,
            "dt_max": config.run.dt_max,
            "dt_min": config.run.dt_min,
            "output_dir": config.run.output_dir,
        }.items() if v is not None},
        "analysis": {
            "heatmap_cell": config.analysis.heatmap_cell,
            "heatmap_origin": list(config.analysis.heatmap_origin),
            "heatmap_extent": list(config.analysis.heatmap_extent),
            "radial_bands": list(config.analysis.radial_bands),
        },
        "symbols": {"level_thresholds": list(config.symbol_level_thresholds)},
    }
    return out


def _emission_to_dict(profile, config):
    raw_emission = config.raw.get("emission", {}) if config.raw else {}
    src = profile.diameter_source
    if isinstance(src, LogNormalSource):
        diameter = {"kind": "lognormal", "mu": src.mu, "sigma": src.sigma}
    else:
        diameter = {"kind": "empirical_inline", "unit": "m",
                    "values": list(src.cdf.values),
                    "counts": _cdf_counts(src.cdf)}
    speed_src = profile.speed_source
    if isinstance(speed_src, BimodalSpeedSource):
        speed = {"kind": "bimodal", "cloud_speed": speed_src.cloud_speed,
                 "droplet_speed": speed_src.droplet_speed,
                 "mode_fraction": speed_src.mode_fraction,
                 "diameter_split": speed_src.diameter_split}
    else:
        speed = {"kind": "empirical_speeds", "unit": "m_per_s",
                 "values": list(speed_src.cdf.values),
                 "counts": _cdf_counts(speed_src.cdf)}
    height = raw_emission.get("height", 1.64)
    return {
        "height": height,
        "opening_angle_std_deg": profile.opening_angle_std_deg,
        "min_diameter_cutoff": profile.min_diameter_cutoff,
        "jet_speed": profile.jet_speed,
        "mass_density": profile.mass_density,
        "particles_per_event": {
            name: profile.particles_per_event[kind]
            for name, kind in _EVENT_KINDS.items()},
        "diameter_source": diameter,
        "speed_source": speed,
    }


def _cdf_counts(cdf):
    probs = np.diff(np.concatenate([[0.0], cdf.cdf]))
    return list(probs / probs.min()) if probs.min() > 0 else list(probs)


def _agent_to_dict(a):
    out = {
        "id": a.id,
        "infected": a.infected,
        "waypoints": [[t, list(p)] for t, p in a.waypoints],
        "facing": list(a.facing),
        "apertures": [{"kind": ap.kind.value, "offset": list(ap.offset),
                       "radius": ap.radius, "gain": ap.gain}
                      for ap in a.apertures],
        "detection_threshold": a.detection_threshold,
        "virion_concentration": a.virion_concentration,
        "mask": {"enabled": a.mask_enabled, "efficiency": a.mask_efficiency,
                 "jet_attenuation": a.mask_jet_attenuation},
        "events": {
            "scheduled": [{"t": t, "kind": k.value} for t, k in a.scheduled]},
    }
    if a.events is not None:
        out["events"].update({
            "breath_rate_per_min": a.events.breath_rate_per_min,
            "p_cough": a.events.p_cough,
            "p_sneeze": a.events.p_sneeze,
            "event_step": a.events.event_step})
        if a.events.markov is not None:
            out["events"]["markov"] = {
                "p_silence_to_talk": a.events.markov.p_silence_to_talk,
                "p_talk_to_silence": a.events.markov.p_talk_to_silence,
                "step": a.events.markov.step}
    return out
